"""Deterministic smart derivative contract engine and simulation harness."""

from .contract import (
    CheckOutcome,
    ContractInstance,
    ContractSpec,
    ContractState,
    Phase,
    SettleOutcome,
    SettleResult,
    TerminationCause,
)
from .errors import SdcError
from .journal import Clock, EventKind, EventRecord, Journal, JournalBlock, SYSTEM_ACTOR
from .ledger import AccountId, Bucket, Ledger
from .scheduler import (
    Engine,
    LifecycleEvent,
    Mode,
    RequestOutcome,
    ScriptStep,
    TimelineEntry,
    build_timeline,
    format_script,
    parse_script,
    timeline_script,
)
from .simulator import (
    MarketModel,
    RunReport,
    Scenario,
    calibrate_buffer,
    generate_path,
    load_path_csv,
    load_scenario,
    one_period_samples,
    parse_scenario,
    run_simulation,
    write_path_csv,
    write_report,
)
from .valuation import (
    Forward,
    MarginOracle,
    MarketSnapshot,
    MarketStore,
    OracleBinding,
    ScriptedOracle,
    SettlementAmount,
    VanillaSwap,
    discount_factor,
    margin_buffer,
    price,
    register_pricer,
    round_to_minor_units,
    settlement_amount,
)

__all__ = [name for name in dir() if not name.startswith("_")]
