"""Event timeline and the three trigger regimes.

The timeline lays one cycle per settlement interval onto the integer
tick grid: wallets open at t_i, close `prefund_window` ticks later, the
margin check runs on the following tick, and valuation then settlement
share the period-end tick t_{i+1} (valuation strictly first). The final
cycle carries a MATURITY event that posts the termination fees back.

Three ways to drive the same engine:

  * active  -- the engine fires each timeline event at its scheduled tick
    (the trusted third party with market-data pre-checks).
  * passive -- a party requests each event; the engine checks that the
    request names the unique next-due event at its due tick by an
    authorized account, and rejects without state change otherwise.
  * driver  -- an explicit script of (tick, event, party) rows is
    replayed; illegal steps are journaled as rejections, never raised.

Agent policies get a hook every visited tick (after that tick's events),
so deposits land inside open windows and all modes interleave agent
actions identically. For a compliant scenario the three modes therefore
produce bit-identical journals.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Protocol, Sequence

from .contract import ContractInstance, ContractSpec, Phase, SettleOutcome, TerminationCause
from .errors import MissingSnapshot, PreconditionFailed, ScenarioParseError, SdcError
from .journal import Clock, EventKind, EventRecord, Journal
from .ledger import AccountId, Ledger
from .valuation import SettlementAmount


class LifecycleEvent(str, Enum):
    OPEN_ACCOUNTS = "OPEN_ACCOUNTS"
    CLOSE_ACCOUNTS = "CLOSE_ACCOUNTS"
    MARGIN_CHECK = "MARGIN_CHECK"
    VALUATION = "VALUATION"
    SETTLEMENT = "SETTLEMENT"
    MATURITY = "MATURITY"


class Mode(str, Enum):
    ACTIVE = "active"
    PASSIVE = "passive"
    DRIVER = "driver"


@dataclass(frozen=True)
class TimelineEntry:
    tick: int
    kind: LifecycleEvent
    cycle: int


def build_timeline(spec: ContractSpec) -> list[TimelineEntry]:
    """One cycle per settlement interval; the last cycle carries MATURITY."""
    entries: list[TimelineEntry] = []
    grid = spec.settlement_times
    for i in range(spec.cycles):
        t_open = grid[i]
        t_settle = grid[i + 1]
        entries.append(TimelineEntry(t_open, LifecycleEvent.OPEN_ACCOUNTS, i))
        entries.append(TimelineEntry(t_open + spec.prefund_window, LifecycleEvent.CLOSE_ACCOUNTS, i))
        entries.append(TimelineEntry(t_open + spec.prefund_window + 1, LifecycleEvent.MARGIN_CHECK, i))
        entries.append(TimelineEntry(t_settle, LifecycleEvent.VALUATION, i))
        entries.append(TimelineEntry(t_settle, LifecycleEvent.SETTLEMENT, i))
    entries.append(TimelineEntry(grid[-1], LifecycleEvent.MATURITY, spec.cycles - 1))
    assert all(a.tick <= b.tick for a, b in zip(entries, entries[1:]))
    return entries


@dataclass(frozen=True)
class ScriptStep:
    tick: int
    kind: LifecycleEvent
    party: AccountId


def timeline_script(spec: ContractSpec, party: AccountId | None = None) -> list[ScriptStep]:
    requester = party if party is not None else spec.party_a
    return [ScriptStep(e.tick, e.kind, requester) for e in build_timeline(spec)]


def format_script(steps: Sequence[ScriptStep]) -> str:
    return "".join(f"{s.tick},{s.kind.value},{s.party}\n" for s in steps)


def parse_script(text: str) -> list[ScriptStep]:
    steps = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise ScenarioParseError("expected 'tick,event_kind,requesting_party'", line=lineno)
        try:
            tick = int(parts[0])
            kind = LifecycleEvent(parts[1].strip())
        except ValueError as exc:
            raise ScenarioParseError(str(exc), line=lineno) from None
        steps.append(ScriptStep(tick, kind, parts[2].strip()))
    return steps


@dataclass(frozen=True)
class RequestOutcome:
    accepted: bool
    reason: str | None = None

    @classmethod
    def ok(cls) -> "RequestOutcome":
        return cls(accepted=True)

    @classmethod
    def rejected(cls, reason: str) -> "RequestOutcome":
        return cls(accepted=False, reason=reason)


class AgentPolicy(Protocol):
    def on_tick(self, engine: "Engine", party: AccountId) -> None: ...


class Oracle(Protocol):
    def query(self, binding, period_start: int, period_end: int) -> SettlementAmount: ...


@dataclass
class CycleRecord:
    """Per-cycle run log row: what the oracle said and what moved."""

    cycle: int
    period_start: int
    settle_tick: int
    value_end: float | None
    f_value: float
    amount: int
    payer: str
    receiver: str
    result: str


class Engine:
    """Single-threaded executor for one contract on one ledger."""

    def __init__(self, contract: ContractInstance, oracle: Oracle, clock: Clock,
                 journal: Journal, agents: dict[AccountId, AgentPolicy] | None = None,
                 oracle_account: AccountId | None = None, retry_limit: int = 3):
        self.contract = contract
        self.oracle = oracle
        self.clock = clock
        self.journal = journal
        self.agents = agents or {}
        self.oracle_account = oracle_account
        self.retry_limit = retry_limit
        self.timeline = build_timeline(contract.spec)
        self.cycle_log: list[CycleRecord] = []
        self.init_error: PreconditionFailed | None = None
        self._cursor = 0
        self._pending_f: SettlementAmount | None = None
        self._journal_rejections = False

    @property
    def ledger(self) -> Ledger:
        return self.contract.ledger

    @property
    def spec(self) -> ContractSpec:
        return self.contract.spec

    # -- top-level runs --

    def run(self, mode: Mode = Mode.ACTIVE, script: Sequence[ScriptStep] | None = None) -> None:
        if not self._initialize():
            return
        if mode is Mode.DRIVER:
            self._run_driver(script if script is not None else timeline_script(self.spec))
        else:
            self._run_scheduled(passive=(mode is Mode.PASSIVE))

    def _initialize(self) -> bool:
        if self.contract.phase is not Phase.PRE_CHECK:
            return True
        start = self.spec.settlement_times[0]
        self.clock.advance_to(start)
        try:
            self.contract.initialize(start)
        except PreconditionFailed as exc:
            self.init_error = exc
            return False
        return True

    def _run_scheduled(self, passive: bool) -> None:
        grid = self.spec.settlement_times
        for tick in range(grid[0], grid[-1] + 1):
            self.clock.advance_to(tick)
            while self._cursor < len(self.timeline) and self.timeline[self._cursor].tick == tick:
                if passive:
                    outcome = self.request_event(self.spec.party_a,
                                                 self.timeline[self._cursor].kind, tick)
                    if not outcome.accepted:
                        break  # leave the event pending instead of re-requesting forever
                else:
                    entry = self.timeline[self._cursor]
                    self._cursor += 1
                    self._fire(entry)
            self._agent_hooks()
            if self._finished():
                break

    def _run_driver(self, script: Sequence[ScriptStep]) -> None:
        self._journal_rejections = True
        try:
            i = 0
            while i < len(script):
                step = script[i]
                if step.tick < self.clock.now():
                    self._reject_step(step, "time-travel")
                    i += 1
                    continue
                self.clock.advance_to(step.tick)
                while i < len(script) and script[i].tick == step.tick:
                    self._attempt_step(script[i])
                    i += 1
                self._agent_hooks()
        finally:
            self._journal_rejections = False

    # -- passive-mode entry point --

    def request_event(self, party: AccountId, kind: LifecycleEvent, now: int) -> RequestOutcome:
        """Execute the event iff it is the next due timeline event, requested
        at its scheduled tick by a contract party or the oracle account."""
        if party not in self.spec.parties and party != self.oracle_account:
            return RequestOutcome.rejected("NotAuthorized")
        if self._cursor >= len(self.timeline):
            return RequestOutcome.rejected("NotDue")
        entry = self.timeline[self._cursor]
        if kind is not entry.kind or now != entry.tick:
            return RequestOutcome.rejected("NotDue")
        self._cursor += 1
        try:
            self._fire(entry)
        except SdcError as exc:
            self._cursor -= 1
            return RequestOutcome.rejected(str(exc))
        return RequestOutcome.ok()

    def _attempt_step(self, step: ScriptStep) -> None:
        if step.party not in self.spec.parties and step.party != self.oracle_account:
            self._reject_step(step, "NotAuthorized")
            return
        if self._cursor >= len(self.timeline) or step.kind is not self.timeline[self._cursor].kind:
            self._reject_step(step, "NotDue")
            return
        entry = self.timeline[self._cursor]
        self._cursor += 1
        try:
            self._fire(entry)
        except SdcError as exc:
            self._cursor -= 1
            self._reject_step(step, str(exc))

    def _reject_step(self, step: ScriptStep, reason: str) -> None:
        if not self._journal_rejections:
            return
        state = self.contract.state().label()
        self.journal.append(EventRecord.create(
            self.clock.now(), EventKind.STATE_TRANSITION, step.party,
            contract=self.spec.contract_id, src=state, dst=state, cause="rejected",
            event=step.kind.value, reason=reason))

    # -- event execution --

    def _fire(self, entry: TimelineEntry) -> None:
        c = self.contract
        if c.phase is Phase.ERROR:
            return
        if c.phase is Phase.TERMINATED:
            if (entry.kind is LifecycleEvent.MATURITY
                    and c.state().cause is TerminationCause.MATURED):
                c.return_fees()
            return
        now = self.clock.now()
        if entry.kind is LifecycleEvent.OPEN_ACCOUNTS:
            return  # wallets were reopened by initialization / the settlement itself
        if entry.kind is LifecycleEvent.CLOSE_ACCOUNTS:
            c.close_accounts(now)
        elif entry.kind is LifecycleEvent.MARGIN_CHECK:
            c.margin_check()
        elif entry.kind is LifecycleEvent.VALUATION:
            self._run_valuation(entry)
        elif entry.kind is LifecycleEvent.SETTLEMENT:
            outcome = c.settle(self._pending_f, now)
            self._log_cycle(entry, outcome)
            self._pending_f = None
        elif entry.kind is LifecycleEvent.MATURITY:
            return  # meaningful only once the contract matured (handled above)

    def _run_valuation(self, entry: TimelineEntry) -> None:
        grid = self.spec.settlement_times
        period = (grid[entry.cycle], grid[entry.cycle + 1])
        failure: MissingSnapshot | None = None
        for _ in range(1 + self.retry_limit):
            try:
                amount = self.oracle.query(self.spec.binding, *period)
                self.contract.deliver_valuation(amount)
                self._pending_f = amount
                return
            except MissingSnapshot as exc:
                failure = exc
        self.contract.mark_error(str(failure))

    def _log_cycle(self, entry: TimelineEntry, outcome: SettleOutcome) -> None:
        store = getattr(self.oracle, "store", None)
        value_end = None
        if store is not None and store.has(entry.tick):
            from .valuation import get_pricer
            pricer = get_pricer(self.spec.pricer_version)
            value_end = pricer(self.spec.product, entry.tick * self.spec.tick_years,
                               store.get(entry.tick))
        self.cycle_log.append(CycleRecord(
            cycle=entry.cycle, period_start=self.spec.settlement_times[entry.cycle],
            settle_tick=entry.tick, value_end=value_end, f_value=outcome.value,
            amount=outcome.amount, payer=outcome.payer or "", receiver=outcome.receiver or "",
            result=outcome.result.value))

    def _agent_hooks(self) -> None:
        for party in self.spec.parties:
            policy = self.agents.get(party)
            if policy is not None:
                policy.on_tick(self, party)

    def _finished(self) -> bool:
        if self.contract.phase is Phase.ERROR:
            return True
        if self.contract.phase is Phase.TERMINATED:
            state = self.contract.state()
            return state.cause is not TerminationCause.MATURED or self.contract.fees_returned
        return False
