"""Finite-blocklength quantities for IR-HARQ over a unit-noise AWGN link.

All functions take the payload in bits and work in nats internally.
Powers are per-symbol SNRs, blocklengths are channel uses.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

from .model import (
    LN2,
    DegenerateStateError,
    HarqState,
    InfeasibleTransitionError,
    RoundPlan,
)

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def q_func(x):
    """Gaussian tail probability Q(x) = P(Z > x).

    For x > 0 the scaled complementary error function keeps full relative
    accuracy deep into the tail (no cancellation against 1).
    """
    arr = np.asarray(x, dtype=float)
    z = arr / _SQRT2
    with np.errstate(under="ignore", over="ignore", invalid="ignore"):
        pos = 0.5 * special.erfcx(np.where(z > 0, z, 0.0)) * np.exp(-np.where(z > 0, z, 0.0) ** 2)
        neg = 0.5 * special.erfc(np.where(z > 0, 0.0, z))
    out = np.where(z > 0, pos, neg)
    if out.ndim == 0:
        return float(out)
    return out


def q_inv(p):
    """Inverse of :func:`q_func` on (0, 1)."""
    arr = np.asarray(p, dtype=float)
    if np.any(~((arr > 0.0) & (arr < 1.0))):
        raise ValueError("q_inv is defined on the open interval (0, 1)")
    x = -special.ndtri(arr)
    # one Newton step against q_func polishes the last few ulps in the far tail
    phi = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    x = x + (q_func(x) - arr) / phi
    if x.ndim == 0:
        return float(x)
    return x


def dispersion_per_symbol(power):
    """P(P+2)/(P+1)^2, i.e. 1 - 1/(1+P)^2 without cancellation at small P."""
    p = np.asarray(power, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.where(np.isinf(p), 1.0, p * (p + 2.0) / (p + 1.0) ** 2)
    if out.ndim == 0:
        return float(out)
    return out


def normal_approx_argument(blocklengths, powers, payload_bits: float) -> float:
    """Argument of Q in the normal approximation for the given rounds."""
    n = np.asarray(blocklengths, dtype=float)
    p = np.asarray(powers, dtype=float)
    info = float(np.sum(n * np.log1p(p))) - payload_bits * LN2
    disp = float(np.sum(n * dispersion_per_symbol(p)))
    if disp <= 0.0:
        return -math.inf if payload_bits > 0 else math.inf
    return info / math.sqrt(disp)


def outage_prob(plan: RoundPlan, payload_bits: float, m: int | None = None) -> float:
    """Outage probability after the first ``m`` rounds (all rounds by default).

    A prefix that carries no power at all cannot decode a non-empty payload,
    so it is reported as certain failure.
    """
    m = plan.rounds if m is None else m
    if not 1 <= m <= plan.rounds:
        raise ValueError(f"round index {m} outside 1..{plan.rounds}")
    n = plan.blocklengths[:m]
    p = plan.powers[:m]
    if all(pi == 0.0 for pi in p):
        return 1.0 if payload_bits > 0 else 0.0
    return q_func(normal_approx_argument(n, p, payload_bits))


def per_round_outage(plan: RoundPlan, payload_bits: float) -> tuple[float, ...]:
    return tuple(outage_prob(plan, payload_bits, m) for m in range(1, plan.rounds + 1))


def average_energy(plan: RoundPlan, payload_bits: float) -> float:
    """Expected transmitted energy: round m is only sent if rounds 1..m-1 failed."""
    total = 0.0
    eps_prev = 1.0
    for m, (n, p) in enumerate(zip(plan.blocklengths, plan.powers), start=1):
        if p > 0.0:
            total += n * p * eps_prev
        eps_prev = outage_prob(plan, payload_bits, m)
    return total


def state_init(n1: int, p1: float, payload_bits: float) -> HarqState:
    if p1 <= 0.0:
        raise DegenerateStateError("first-round power must be positive to define a margin")
    v1 = n1 * dispersion_per_symbol(p1)
    c1 = (n1 * math.log1p(p1) - payload_bits * LN2) / math.sqrt(v1)
    return HarqState(int(n1), v1, c1)


def state_forward(prev: HarqState, n: int, power: float) -> HarqState:
    v_prev = prev.cum_dispersion
    v = v_prev + n * dispersion_per_symbol(power)
    if power == 0.0:
        return HarqState(prev.cum_blocklength + n, v_prev, prev.margin)
    c = (prev.margin * math.sqrt(v_prev) + n * math.log1p(power)) / math.sqrt(v)
    return HarqState(prev.cum_blocklength + n, v, c)


def implied_power(v_delta: float, n: float) -> float:
    """Per-symbol power whose n symbols add exactly ``v_delta`` to the dispersion sum."""
    if v_delta < 0.0 or v_delta >= n:
        raise InfeasibleTransitionError(
            f"dispersion increment {v_delta!r} not in [0, {n})"
        )
    return math.expm1(-0.5 * math.log1p(-v_delta / n))


def state_backward(nxt: HarqState, n_prev: int, v_prev: float) -> float:
    """Margin of the predecessor state (n_prev, v_prev, ?) that leads to ``nxt``."""
    if v_prev <= 0.0:
        raise DegenerateStateError("predecessor without dispersion: use the first-round layer")
    n = nxt.cum_blocklength - n_prev
    dv = nxt.cum_dispersion - v_prev
    if n <= 0 or dv < 0.0 or dv >= n:
        raise InfeasibleTransitionError(
            f"cannot add dispersion {dv!r} with {n} symbols"
        )
    return (nxt.margin * math.sqrt(nxt.cum_dispersion) + 0.5 * n * math.log1p(-dv / n)) / math.sqrt(
        v_prev
    )


def e_noharq_infinity(payload_bits: float, reliability_target: float) -> float:
    """One-shot energy as the blocklength grows without bound."""
    q = q_inv(1.0 - reliability_target)
    root = q + math.sqrt(q * q + 2.0 * payload_bits * LN2)
    return 0.5 * root * root


def region_b_floor(payload_bits: float) -> float:
    return q_func(math.sqrt(2.0 * payload_bits * LN2) / 3.0)


def region_b_contains(plan: RoundPlan, payload_bits: float) -> bool:
    """Whether ``0.5 > eps_1 > eps_M > Q(sqrt(2 B ln2)/3)``.

    For a single round the middle link of the chain is dropped.
    """
    eps = per_round_outage(plan, payload_bits)
    floor = region_b_floor(payload_bits)
    if plan.rounds == 1:
        return 0.5 > eps[0] > floor
    return 0.5 > eps[0] > eps[-1] > floor
