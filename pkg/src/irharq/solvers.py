"""Latency accounting and the scalar reliability solver."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fbl import dispersion_per_symbol, outage_prob, per_round_outage, q_inv
from .model import (
    LN2,
    InfeasibleSpecError,
    NoSolutionError,
    OptimizationResult,
    ProblemSpec,
    RoundPlan,
)

# largest power the doubling search will try before declaring the target unreachable
POWER_CEILING = 1e300


def _ceil(x: float) -> int:
    # M*d is often a float like 30.000000000000004
    return math.ceil(round(x, 9))


@dataclass(frozen=True)
class LatencyBudget:
    """Channel uses available for symbols.

    For the constant model ``effective_total`` already has the feedback
    delays removed. For the linear model the delays depend on the plan, so
    ``effective_total`` is the raw budget and ``[interval_low, interval_high]``
    is the range the consumed latency (symbols plus delays) must land in.
    """

    effective_total: int
    interval_low: int
    interval_high: int


def latency_budget(spec: ProblemSpec) -> LatencyBudget:
    N, M, n_min = spec.latency_budget, spec.rounds, spec.min_blocklength
    model = spec.delay_model
    if model.kind == "none":
        budget = LatencyBudget(N, N, N)
        needed = M * n_min
    elif model.kind == "constant":
        eff = N - _ceil(M * model.value)
        budget = LatencyBudget(eff, eff, eff)
        needed = M * n_min
    else:
        r = model.value
        budget = LatencyBudget(N, N - M * _ceil(r), N)
        # every round at n_min, each followed by r times the symbols so far
        needed = linear_latency([n_min] * M, r)
        if needed <= N:
            return budget
        raise InfeasibleSpecError(
            f"{M} rounds of {n_min} symbols need latency {needed:.6g} > N={N}"
        )
    if budget.effective_total < needed:
        raise InfeasibleSpecError(
            f"effective budget {budget.effective_total} < {M} rounds x n_min={n_min}"
        )
    return budget


def linear_latency(blocklengths, r: float) -> float:
    """Symbols plus feedback delays when the delay after each round is r x (symbols so far)."""
    total = 0.0
    cum = 0
    for n in blocklengths:
        cum += int(n)
        total += n + r * cum
    # r * cum sums pick up float noise like 400.00000000000006
    return round(total, 9)


def last_round_blocklength(spec: ProblemSpec, prefix_n, total: int) -> int:
    """Blocklength left for the final round once ``prefix_n`` has been sent.

    ``total`` is the effective symbol budget for the none/constant models; the
    linear model works from the raw budget and charges r x (symbols so far)
    after every round, the last one included.
    """
    model = spec.delay_model
    if model.kind != "linear":
        return int(total - sum(prefix_n))
    r = model.value
    used, cum = 0.0, 0
    for n in prefix_n:
        cum += int(n)
        used += n + r * cum
    return int(math.floor(round((spec.latency_budget - used - r * cum) / (1.0 + r), 9)))


def latency_used(plan: RoundPlan, spec: ProblemSpec) -> float:
    model = spec.delay_model
    symbols = sum(plan.blocklengths)
    if model.kind == "none":
        return float(symbols)
    if model.kind == "constant":
        return float(symbols + _ceil(plan.rounds * model.value))
    return linear_latency(plan.blocklengths, model.value)


def _margin_arg(info, disp, n, p):
    with np.errstate(divide="ignore", invalid="ignore"):
        return (info + n * np.log1p(p)) / np.sqrt(disp + n * dispersion_per_symbol(p))


def solve_last_power(info_prev, disp_prev, n_last, c_target, p_max: float | None = None):
    """Vectorised core of :func:`solve_power_bisection`.

    ``info_prev`` is sum(n ln(1+P)) - B ln2 over the earlier rounds and
    ``disp_prev`` their dispersion sum. Returns the smallest power reaching
    margin ``c_target`` (NaN where the target is already met at zero power or
    needs more than ``p_max``).
    """
    info = np.asarray(info_prev, dtype=float)
    disp = np.asarray(disp_prev, dtype=float)
    n = np.asarray(n_last, dtype=float)
    c = np.asarray(c_target, dtype=float)
    info, disp, n, c = np.broadcast_arrays(info, disp, n, c)
    ceiling = POWER_CEILING if p_max is None else float(p_max)

    with np.errstate(divide="ignore", invalid="ignore"):
        at_zero = np.where(disp > 0, info / np.sqrt(disp), -np.inf)
    ok = at_zero < c

    hi = np.ones(info.shape)
    active = ok & (_margin_arg(info, disp, n, hi) < c)
    while np.any(active):
        hi = np.where(active, hi * 2.0, hi)
        blown = active & (hi > ceiling)
        ok &= ~blown
        active &= ~blown
        active &= _margin_arg(info, disp, n, hi) < c
    hi = np.where(ok, np.minimum(hi, ceiling), np.nan)
    if p_max is not None:
        ok &= _margin_arg(info, disp, n, hi) >= c
    lo = np.where(hi > 1.0, hi / 2.0, 0.0)

    for _ in range(200):
        mid = 0.5 * (lo + hi)
        below = _margin_arg(info, disp, n, mid) < c
        lo = np.where(ok & below, mid, lo)
        hi = np.where(ok & ~below, mid, hi)
        if not np.any(ok & (hi - lo > 4e-16 * hi)):
            break
    out = np.where(ok, hi, np.nan)
    if out.ndim == 0:
        return float(out)
    return out


def prefix_sums(blocklengths, powers, payload_bits: float) -> tuple[float, float]:
    n = np.asarray(blocklengths, dtype=float)
    p = np.asarray(powers, dtype=float)
    info = float(np.sum(n * np.log1p(p))) - payload_bits * LN2
    disp = float(np.sum(n * dispersion_per_symbol(p)))
    return info, disp


def solve_power_bisection(
    prefix_n,
    prefix_p,
    n_last: int,
    payload_bits: float,
    target_eps: float,
    p_max: float | None = None,
) -> float:
    """Power of the last round that brings the outage probability to ``target_eps``.

    Raises :class:`NoSolutionError` when the earlier rounds already meet the
    target (the last round cannot help) or when ``p_max`` is not enough.
    """
    if n_last < 1:
        raise ValueError("n_last must be >= 1")
    info, disp = prefix_sums(prefix_n, prefix_p, payload_bits)
    if len(prefix_n):
        eps_prev = outage_prob(RoundPlan(prefix_n, prefix_p), payload_bits)
        if target_eps >= eps_prev:
            raise NoSolutionError(
                f"target {target_eps:.3g} is not below the previous outage {eps_prev:.3g}"
            )
    p = solve_last_power(info, disp, n_last, q_inv(target_eps), p_max)
    if math.isnan(p):
        raise NoSolutionError(f"no power up to {p_max or POWER_CEILING:.3g} meets {target_eps:.3g}")
    return p


def one_shot_optimum(spec: ProblemSpec) -> OptimizationResult:
    if spec.rounds != 1:
        raise ValueError("one_shot_optimum needs a single-round spec")
    budget = latency_budget(spec)
    if spec.delay_model.kind == "linear":
        r = spec.delay_model.value
        n1 = int(math.floor(round(spec.latency_budget / (1.0 + r), 9)))
    else:
        n1 = budget.effective_total
    p1 = solve_power_bisection([], [], n1, spec.payload_bits, spec.outage_target)
    plan = RoundPlan([n1], [p1])
    return OptimizationResult(
        plan=plan,
        per_round_eps=per_round_outage(plan, spec.payload_bits),
        energy=n1 * p1,
        latency_used=latency_used(plan, spec),
        budget=spec.latency_budget,
        delay_model=spec.delay_model,
        method="one-shot",
    )
