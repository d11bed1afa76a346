"""Derivative contract lifecycle state machine.

One instance walks a fixed settlement grid t_0 < t_1 < ... < t_n. Each
cycle i runs: accounts open at t_i for `prefund_window` ticks (the only
window in which parties may move margin), accounts close, margin buckets
are checked against the required buffers, the period's settlement amount
is delivered by the oracle, and the settlement executes at t_{i+1}.

Termination is total and absorbing, with exactly three causes:

  * INSUFFICIENT_PREFUND -- a margin bucket below its buffer at the check;
    the deficient party's fee bucket crosses to the other party.
  * SETTLEMENT_FAILED -- the owed amount exceeds the payer's margin bucket;
    the whole bucket settles partially and the payer's fee crosses.
  * MATURED -- the final settlement executed; margin remainders return
    immediately and both fee buckets are posted back to their owners.

Every transition, transfer and termination is journaled; a failed call
raises and changes nothing.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .errors import (
    AccountsNotOpen,
    NoValuation,
    NotAParty,
    PreconditionFailed,
    TimestampMismatch,
    TooEarly,
    WrongState,
)
from .journal import Clock, EventKind, EventRecord, Journal, SYSTEM_ACTOR
from .ledger import AccountId, Bucket, Ledger, check_amount
from .valuation import OracleBinding, Product, SettlementAmount, round_to_minor_units


class Phase(str, Enum):
    PRE_CHECK = "PreCheck"
    ACCOUNTS_OPEN = "AccountsOpen"
    MARGIN_CHECK = "MarginCheck"
    AWAIT_VALUATION = "AwaitValuation"
    MARGIN_CALCULATION = "MarginCalculation"
    SETTLED = "Settled"
    TERMINATED = "Terminated"
    ERROR = "Error"


class TerminationCause(str, Enum):
    INSUFFICIENT_PREFUND = "INSUFFICIENT_PREFUND"
    SETTLEMENT_FAILED = "SETTLEMENT_FAILED"
    MATURED = "MATURED"


@dataclass(frozen=True)
class ContractState:
    phase: Phase
    until: int | None = None          # ACCOUNTS_OPEN: first tick with access denied
    settle_at: int | None = None      # AWAIT_VALUATION / MARGIN_CALCULATION
    cycle: int | None = None          # SETTLED
    cause: TerminationCause | None = None
    at: int | None = None             # TERMINATED
    detail: str | None = None         # ERROR

    def label(self) -> str:
        if self.phase is Phase.ACCOUNTS_OPEN:
            return f"AccountsOpen[until={self.until}]"
        if self.phase is Phase.AWAIT_VALUATION:
            return f"AwaitValuation[settleAt={self.settle_at}]"
        if self.phase is Phase.SETTLED:
            return f"Settled[{self.cycle}]"
        if self.phase is Phase.TERMINATED:
            return f"Terminated[{self.cause.value}@{self.at}]"
        if self.phase is Phase.ERROR:
            return f"Error[{self.detail}]"
        return self.phase.value


@dataclass(frozen=True)
class ContractSpec:
    """Full deterministic contract terms agreed at inception."""

    contract_id: str
    party_a: AccountId
    party_b: AccountId
    product: Product
    settlement_times: tuple[int, ...]   # ticks t_0..t_n; t_0 is inception, t_n maturity
    margin_a: int
    margin_b: int
    fee_a: int
    fee_b: int
    prefund_window: int                 # ticks of wallet access after each settlement
    pricer_version: str
    tick_years: float

    def __post_init__(self):
        for name in ("margin_a", "margin_b", "fee_a", "fee_b"):
            if check_amount(getattr(self, name)) == 0:
                raise ValueError(f"{name} must be positive")
        grid = self.settlement_times
        if len(grid) < 2:
            raise ValueError("need at least inception and one settlement time")
        if any(t2 <= t1 for t1, t2 in zip(grid, grid[1:])):
            raise ValueError("settlement times must be strictly increasing")
        gap = min(t2 - t1 for t1, t2 in zip(grid, grid[1:]))
        if not 1 <= self.prefund_window < gap:
            raise ValueError(f"prefund window must be in [1, {gap}), got {self.prefund_window}")
        if self.tick_years <= 0:
            raise ValueError("tick_years must be positive")
        grid_maturity = grid[-1] * self.tick_years
        if abs(self.product.maturity - grid_maturity) > 1e-9:
            raise ValueError(f"product maturity {self.product.maturity} does not sit on the "
                             f"final grid tick ({grid_maturity})")
        if self.party_a == self.party_b:
            raise ValueError("contract needs two distinct parties")

    @property
    def parties(self) -> tuple[AccountId, AccountId]:
        return (self.party_a, self.party_b)

    @property
    def cycles(self) -> int:
        return len(self.settlement_times) - 1

    def margin_required(self, party: AccountId) -> int:
        return self.margin_a if party == self.party_a else self.margin_b

    def fee(self, party: AccountId) -> int:
        return self.fee_a if party == self.party_a else self.fee_b

    def other(self, party: AccountId) -> AccountId:
        return self.party_b if party == self.party_a else self.party_a

    @property
    def binding(self) -> OracleBinding:
        return OracleBinding(contract_id=self.contract_id, product=self.product,
                             pricer_version=self.pricer_version, tick_years=self.tick_years)


@dataclass(frozen=True)
class CheckOutcome:
    passed: bool
    deficient: tuple[AccountId, ...] = ()


class SettleResult(str, Enum):
    SETTLED = "SETTLED"
    MATURED = "MATURED"
    FAILED = "FAILED"


@dataclass(frozen=True)
class SettleOutcome:
    result: SettleResult
    value: float                 # signed settlement amount before rounding
    amount: int                  # minor units actually moved
    payer: AccountId | None
    receiver: AccountId | None


class ContractInstance:
    """A single contract bound to a ledger, journal and clock."""

    def __init__(self, spec: ContractSpec, ledger: Ledger, journal: Journal, clock: Clock):
        for party in spec.parties:
            ledger.balance_of(party)  # parties must exist on this ledger
        self.spec = spec
        self.ledger = ledger
        self._journal = journal
        self._clock = clock
        self._state = ContractState(phase=Phase.PRE_CHECK)
        self.cycle = 0
        self.pending_valuation: SettlementAmount | None = None
        self.fees_returned = False

    # -- reads --

    def state(self) -> ContractState:
        return self._state

    @property
    def phase(self) -> Phase:
        return self._state.phase

    @property
    def is_final(self) -> bool:
        return self._state.phase in (Phase.TERMINATED, Phase.ERROR)

    def margin_bucket(self, party: AccountId) -> int:
        return self.ledger.segregated_balance(self.spec.contract_id, party, Bucket.MARGIN)

    def fee_bucket(self, party: AccountId) -> int:
        return self.ledger.segregated_balance(self.spec.contract_id, party, Bucket.FEE)

    # -- helpers --

    def _require_party(self, party: AccountId) -> None:
        if party not in self.spec.parties:
            raise NotAParty(f"{party} is not a party to {self.spec.contract_id}")

    def _transition(self, new: ContractState, cause: str) -> None:
        old = self._state
        self._state = new
        self._journal.append(EventRecord.create(
            self._clock.now(), EventKind.STATE_TRANSITION, SYSTEM_ACTOR,
            contract=self.spec.contract_id, src=old.label(), dst=new.label(), cause=cause))

    def _release(self, party: AccountId, bucket: Bucket, amount: int, to: AccountId) -> None:
        if amount > 0:
            self.ledger.release_segregated(self.spec.contract_id, party, bucket,
                                           amount, to, actor=SYSTEM_ACTOR)

    def _journal_termination(self, cause: TerminationCause, **details) -> None:
        self._journal.append(EventRecord.create(
            self._clock.now(), EventKind.TERMINATION, SYSTEM_ACTOR,
            contract=self.spec.contract_id, cause=cause.value,
            tick=self._clock.now(), **details))

    # -- lifecycle operations --

    def initialize(self, now: int) -> None:
        """Lock both termination fees and open the first prefunding window.

        Requires each party's free balance to cover its fee top-up plus
        first margin buffer; refuses (naming the deficient party) without
        touching the ledger otherwise.
        """
        if self._state.phase is not Phase.PRE_CHECK:
            raise WrongState(f"{self.spec.contract_id} already initialized")
        top_ups = {}
        for party in self.spec.parties:
            top_up = max(0, self.spec.fee(party) - self.fee_bucket(party))
            need = top_up + self.spec.margin_required(party)
            if self.ledger.balance_of(party) < need:
                raise PreconditionFailed(
                    party, f"{party} holds {self.ledger.balance_of(party)}, "
                           f"needs {need} (fee plus margin buffer)")
            top_ups[party] = top_up
        for party in self.spec.parties:
            if top_ups[party]:
                self.ledger.lock_segregated(self.spec.contract_id, party, Bucket.FEE,
                                            top_ups[party], actor=SYSTEM_ACTOR)
        self._transition(ContractState(phase=Phase.ACCOUNTS_OPEN,
                                       until=now + self.spec.prefund_window),
                         cause="initialized")

    def deposit_margin(self, party: AccountId, amount: int) -> None:
        self._require_party(party)
        if self._state.phase is not Phase.ACCOUNTS_OPEN:
            raise AccountsNotOpen(f"margin wallet closed in {self._state.label()}")
        self.ledger.lock_segregated(self.spec.contract_id, party, Bucket.MARGIN,
                                    check_amount(amount), actor=party)

    def withdraw_margin(self, party: AccountId, amount: int) -> None:
        self._require_party(party)
        if self._state.phase is not Phase.ACCOUNTS_OPEN:
            raise AccountsNotOpen(f"margin wallet closed in {self._state.label()}")
        self.ledger.release_segregated(self.spec.contract_id, party, Bucket.MARGIN,
                                       check_amount(amount), party, actor=party)

    def deposit_fee(self, party: AccountId, amount: int) -> None:
        """Fee posting is legal only before initialization completes."""
        self._require_party(party)
        if self._state.phase is not Phase.PRE_CHECK:
            raise WrongState("termination fee can only be posted at inception")
        self.ledger.lock_segregated(self.spec.contract_id, party, Bucket.FEE,
                                    check_amount(amount), actor=party)

    def withdraw_fee(self, party: AccountId, amount: int) -> None:
        """Fee withdrawal is legal only after regular termination at maturity."""
        self._require_party(party)
        if not (self._state.phase is Phase.TERMINATED
                and self._state.cause is TerminationCause.MATURED):
            raise WrongState("termination fee is locked until the contract matures")
        self.ledger.release_segregated(self.spec.contract_id, party, Bucket.FEE,
                                       check_amount(amount), party, actor=party)

    def close_accounts(self, now: int) -> None:
        if self._state.phase is not Phase.ACCOUNTS_OPEN:
            raise WrongState(f"cannot close accounts in {self._state.label()}")
        if now < self._state.until:
            raise TooEarly(f"window open until tick {self._state.until}, now {now}")
        self._transition(ContractState(phase=Phase.MARGIN_CHECK), cause="window-closed")

    def margin_check(self) -> CheckOutcome:
        """Verify both margin buckets cover their buffers; terminate otherwise."""
        if self._state.phase is not Phase.MARGIN_CHECK:
            raise WrongState(f"no margin check due in {self._state.label()}")
        deficient = tuple(p for p in self.spec.parties
                          if self.margin_bucket(p) < self.spec.margin_required(p))
        if not deficient:
            settle_at = self.spec.settlement_times[self.cycle + 1]
            self._transition(ContractState(phase=Phase.AWAIT_VALUATION, settle_at=settle_at),
                             cause="margins-sufficient")
            return CheckOutcome(passed=True)
        # Termination for insufficient prefunding: each deficient party's fee
        # bucket crosses to the counterparty; margins and surviving fees return.
        for party in self.spec.parties:
            if party in deficient:
                self._release(party, Bucket.FEE, self.fee_bucket(party), self.spec.other(party))
        for party in self.spec.parties:
            self._release(party, Bucket.MARGIN, self.margin_bucket(party), party)
            if party not in deficient:
                self._release(party, Bucket.FEE, self.fee_bucket(party), party)
        now = self._clock.now()
        self._journal_termination(TerminationCause.INSUFFICIENT_PREFUND,
                                  deficient=",".join(deficient))
        self._transition(ContractState(phase=Phase.TERMINATED,
                                       cause=TerminationCause.INSUFFICIENT_PREFUND, at=now),
                         cause="margin-prefunding-insufficient")
        return CheckOutcome(passed=False, deficient=deficient)

    def deliver_valuation(self, amount: SettlementAmount) -> None:
        if self._state.phase is not Phase.AWAIT_VALUATION:
            raise WrongState(f"no valuation awaited in {self._state.label()}")
        if amount.as_of != self._state.settle_at:
            raise TimestampMismatch(
                f"valuation is for tick {amount.as_of}, settlement due {self._state.settle_at}")
        self.pending_valuation = amount
        self._transition(ContractState(phase=Phase.MARGIN_CALCULATION,
                                       settle_at=self._state.settle_at),
                         cause="valuation-delivered")

    def settle(self, f: SettlementAmount | None, now: int) -> SettleOutcome:
        """Execute the period's settlement out of the payer's margin bucket.

        Covered amounts keep the contract alive (reopening the wallets) or
        mature it on the final grid time; an uncovered amount settles
        partially with the whole bucket, crosses the payer's fee and
        terminates.
        """
        if self._state.phase is not Phase.MARGIN_CALCULATION:
            raise WrongState(f"cannot settle in {self._state.label()}")
        if f is None:
            raise NoValuation("no settlement amount delivered for this period")
        due = self._state.settle_at
        if now < due:
            raise TooEarly(f"settlement due at tick {due}, now {now}")
        if now > due:
            raise WrongState(f"settlement was due at tick {due}, now {now}")
        if f.as_of != due:
            raise TimestampMismatch(f"valuation is for tick {f.as_of}, settlement due {due}")

        amount = abs(round_to_minor_units(f.value))
        if f.value > 0:
            payer, receiver = self.spec.party_b, self.spec.party_a
        elif f.value < 0:
            payer, receiver = self.spec.party_a, self.spec.party_b
        else:
            payer = receiver = None
        maturing = self.cycle == self.spec.cycles - 1
        cid = self.spec.contract_id

        if payer is not None and amount > self.margin_bucket(payer):
            # Partial settlement: whole margin bucket plus the fee cross over.
            paid = self.margin_bucket(payer)
            self._release(payer, Bucket.MARGIN, paid, receiver)
            self._release(payer, Bucket.FEE, self.fee_bucket(payer), receiver)
            self._release(receiver, Bucket.MARGIN, self.margin_bucket(receiver), receiver)
            self._release(receiver, Bucket.FEE, self.fee_bucket(receiver), receiver)
            self._journal.append(EventRecord.create(
                now, EventKind.SETTLEMENT, SYSTEM_ACTOR, contract=cid, cycle=self.cycle,
                value=repr(f.value), amount=paid, payer=payer, receiver=receiver,
                outcome="partial"))
            self._journal_termination(TerminationCause.SETTLEMENT_FAILED, payer=payer,
                                      owed=amount, covered=paid)
            self._transition(ContractState(phase=Phase.TERMINATED,
                                           cause=TerminationCause.SETTLEMENT_FAILED, at=now),
                             cause="settlement-exceeded-margin")
            return SettleOutcome(result=SettleResult.FAILED, value=f.value, amount=paid,
                                 payer=payer, receiver=receiver)

        if payer is not None and amount > 0:
            self._release(payer, Bucket.MARGIN, amount, receiver)
        self._journal.append(EventRecord.create(
            now, EventKind.SETTLEMENT, SYSTEM_ACTOR, contract=cid, cycle=self.cycle,
            value=repr(f.value), amount=amount, payer=payer or "", receiver=receiver or "",
            outcome="matured" if maturing else "settled"))
        settled_cycle = self.cycle
        self.pending_valuation = None
        if maturing:
            for party in self.spec.parties:
                self._release(party, Bucket.MARGIN, self.margin_bucket(party), party)
            self._journal_termination(TerminationCause.MATURED)
            self._transition(ContractState(phase=Phase.SETTLED, cycle=settled_cycle),
                             cause="final-settlement-executed")
            self._transition(ContractState(phase=Phase.TERMINATED,
                                           cause=TerminationCause.MATURED, at=now),
                             cause="matured")
            return SettleOutcome(result=SettleResult.MATURED, value=f.value, amount=amount,
                                 payer=payer, receiver=receiver)
        self.cycle += 1
        self._transition(ContractState(phase=Phase.SETTLED, cycle=settled_cycle),
                         cause="settlement-executed")
        self._transition(ContractState(phase=Phase.ACCOUNTS_OPEN,
                                       until=now + self.spec.prefund_window),
                         cause="cycle-complete")
        return SettleOutcome(result=SettleResult.SETTLED, value=f.value, amount=amount,
                             payer=payer, receiver=receiver)

    def return_fees(self) -> None:
        """Post both termination fees back after regular maturity."""
        if not (self._state.phase is Phase.TERMINATED
                and self._state.cause is TerminationCause.MATURED):
            raise WrongState("fees are only posted back after maturity")
        if self.fees_returned:
            return
        for party in self.spec.parties:
            held = self.fee_bucket(party)
            if held:
                self.withdraw_fee(party, held)
        self.fees_returned = True

    def mark_error(self, detail: str) -> None:
        """Suspend the contract on a persistent oracle failure."""
        if self.is_final:
            raise WrongState(f"contract already final in {self._state.label()}")
        self._transition(ContractState(phase=Phase.ERROR, detail=detail), cause="oracle-failure")
