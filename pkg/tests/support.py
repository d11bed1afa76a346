"""Independent oracles the tests check the engine against.

Everything here is derived directly from definitions (explicit discount
curves, telescoped cash-flow sums, raw hashlib chaining, exact-fraction
quantile ranks) and deliberately shares no code with the package.
"""

from __future__ import annotations

import hashlib
import math
import struct
from fractions import Fraction

from sdcsim import EventKind, Phase


def forward_value(notional: float, strike: float, spot: float, rate: float,
                  t: float, maturity: float) -> float:
    return notional * (spot - strike) * math.exp(-rate * (maturity - t))


def swap_value(notional: float, fixed_rate: float, payment_times, accruals,
               rate: float, t: float) -> float:
    """Payer-fixed swap value via the telescoped float leg: remaining float
    payments collapse to 1 - df(t, T_last); the fixed leg is summed
    cash flow by cash flow."""
    remaining = [(T, tau) for T, tau in zip(payment_times, accruals) if T > t]
    if not remaining:
        return 0.0
    df = lambda T: math.exp(-rate * (T - t))
    float_leg = 1.0 - df(remaining[-1][0])
    fixed_leg = fixed_rate * sum(tau * df(T) for T, tau in remaining)
    return notional * (float_leg - fixed_leg)


def product_value(product, t: float, snapshot) -> float:
    """Dispatch on the product shape without importing pricer code."""
    if hasattr(product, "strike"):  # forward
        return forward_value(product.notional, product.strike, snapshot.spot,
                             snapshot.zero_rate, t, product.maturity)
    return swap_value(product.notional, product.fixed_rate, product.payment_times,
                      product.accruals, snapshot.zero_rate, t)


def par_rate(payment_times, accruals, rate: float, t: float = 0.0) -> float:
    """Fixed rate that values the swap to zero on a flat curve."""
    df = lambda T: math.exp(-rate * (T - t))
    annuity = sum(tau * df(T) for T, tau in zip(payment_times, accruals) if T > t)
    last = max(T for T in payment_times if T > t)
    return (1.0 - df(last)) / annuity


def rechain(blocks) -> bool:
    """Recompute the whole hash chain from scratch with raw hashlib."""
    prev = b"\x00" * 32
    for position, block in enumerate(blocks):
        preimage = struct.pack(">Q", block.index) + block.prev_hash + block.payload
        if block.index != position or block.prev_hash != prev:
            return False
        if hashlib.sha256(preimage).digest() != block.hash:
            return False
        prev = block.hash
    return True


def sort_quantile(samples, q) -> int:
    """Nearest-rank quantile of magnitudes with exact-fraction rank math."""
    magnitudes = sorted(abs(x) for x in samples)
    rank = -((-Fraction(str(q)) * len(magnitudes)) // 1)  # ceil via floor-division
    return math.ceil(magnitudes[int(rank) - 1])


def open_intervals_respected(journal, contract_id: str) -> bool:
    """Replay the journal and confirm every party-initiated margin move
    happened while the reconstructed state was AccountsOpen."""
    phase = "PreCheck"
    for record in journal.records():
        if record.kind is EventKind.STATE_TRANSITION:
            if dict(record.details).get("contract") == contract_id \
                    and dict(record.details).get("cause") != "rejected":
                phase = record.detail("dst").split("[")[0]
        elif record.kind in (EventKind.LOCK, EventKind.RELEASE):
            details = dict(record.details)
            if details.get("contract") != contract_id:
                continue
            if details.get("bucket") == "MARGIN" and record.actor not in ("SYSTEM",):
                if phase != Phase.ACCOUNTS_OPEN.value.split("[")[0] and phase != "AccountsOpen":
                    return False
    return True
