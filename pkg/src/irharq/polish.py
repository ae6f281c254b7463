"""Local refinement of a plan found on a quantised grid.

The grid optimizers only see blocklengths on the n_step lattice and margins
on the c grid. Starting from their answer, this module re-optimises the
powers of rounds 1..M-1 continuously and then tries integer blocklength moves,
keeping both equality constraints tight throughout (last blocklength from the
latency budget, last power from the reliability target).
"""

from __future__ import annotations

import math

import numpy as np
from scipy import optimize

from .fbl import q_inv
from .model import ProblemSpec, RoundPlan
from .solvers import last_round_blocklength, latency_budget

_SQRT2 = math.sqrt(2.0)
_LOG_BOUNDS = (-20.0, 7.0)
_MIN_POWER = 1e-3


def _q(x: float) -> float:
    return 0.5 * math.erfc(x / _SQRT2)


class PlanObjective:
    """Average energy as a function of the first M-1 rounds."""

    def __init__(self, spec: ProblemSpec):
        self.spec = spec
        self.total = latency_budget(spec).effective_total
        self.nats = spec.payload_nats
        self.c_target = q_inv(spec.outage_target)

    def last_blocklength(self, prefix_n) -> int:
        return last_round_blocklength(self.spec, prefix_n, self.total)

    def _last_info(self, info: float, disp: float, n: int) -> float:
        """ln(1+P) of the last round that lands exactly on the target margin."""
        c = self.c_target

        def gap(t):
            return info + n * t - c * math.sqrt(disp - n * math.expm1(-2.0 * t))

        if gap(0.0) >= 0.0:
            return 0.0
        hi = 1.0
        while gap(hi) < 0.0:
            hi *= 2.0
            if hi > 1e4:
                return math.inf
        return optimize.brentq(gap, 0.0, hi, xtol=1e-15, rtol=1e-15)

    def energy(self, prefix_n, log_powers) -> float:
        """Energy with the last round filled in; inf if no last round fits."""
        n_last = self.last_blocklength(prefix_n)
        if n_last < self.spec.min_blocklength:
            return math.inf
        info, disp, energy, eps = -self.nats, 0.0, 0.0, 1.0
        for n, lp in zip(prefix_n, log_powers):
            p = math.exp(lp)
            energy += n * p * eps
            t = math.log1p(p)
            info += n * t
            disp += -n * math.expm1(-2.0 * t)
            eps = _q(info / math.sqrt(disp))
        t_last = self._last_info(info, disp, n_last)
        return energy + n_last * math.expm1(t_last) * eps

    def plan(self, prefix_n, log_powers) -> RoundPlan:
        n_last = self.last_blocklength(prefix_n)
        info = -self.nats + sum(n * math.log1p(math.exp(lp)) for n, lp in zip(prefix_n, log_powers))
        disp = sum(-n * math.expm1(-2.0 * math.log1p(math.exp(lp))) for n, lp in zip(prefix_n, log_powers))
        p_last = math.expm1(self._last_info(info, disp, n_last))
        return RoundPlan(list(prefix_n) + [n_last], [math.exp(lp) for lp in log_powers] + [p_last])


def _optimize_powers(obj: PlanObjective, prefix_n, x0, maxiter=200):
    res = optimize.minimize(
        lambda x: obj.energy(prefix_n, x),
        x0,
        method="L-BFGS-B",
        bounds=[_LOG_BOUNDS] * len(x0),
        options={"maxiter": maxiter, "ftol": 1e-15, "gtol": 1e-10},
    )
    if res.fun <= obj.energy(prefix_n, x0):
        return np.asarray(res.x), float(res.fun)
    return np.asarray(x0, float), obj.energy(prefix_n, x0)


def polish_plan(spec: ProblemSpec, plan: RoundPlan, max_step: int = 8) -> RoundPlan:
    """Refine ``plan`` by local search; never returns a worse plan.

    Powers of the first M-1 rounds are optimised by L-BFGS-B on a log scale.
    Blocklengths then move by +-s symbols (one round, or a transfer between
    two rounds) for s = max_step, max_step/2, ..., 1, re-optimising the powers
    after every accepted move.
    """
    if plan.rounds == 1:
        return plan
    obj = PlanObjective(spec)
    prefix = list(plan.blocklengths[:-1])
    # silent rounds get a small seed power so the log scale is defined
    start = np.log(np.maximum(plan.powers[:-1], _MIN_POWER))
    x, best = _optimize_powers(obj, prefix, start)
    step = max(1, int(max_step))
    while step >= 1:
        improved = True
        while improved:
            improved = False
            for delta in _moves(len(prefix), step):
                cand = [n + d for n, d in zip(prefix, delta)]
                if min(cand) < spec.min_blocklength or not math.isfinite(obj.energy(cand, x)):
                    continue
                xc, ec = _optimize_powers(obj, cand, x, maxiter=60)
                if ec < best * (1.0 - 1e-12):
                    prefix, x, best = cand, xc, ec
                    improved = True
        step //= 2
    x, best = _optimize_powers(obj, prefix, x)
    return obj.plan(prefix, x)


def _moves(k: int, step: int):
    """Single-round changes of +-step (the last round absorbs them) and transfers."""
    for i in range(k):
        for s in (step, -step):
            delta = [0] * k
            delta[i] = s
            yield delta
    for i in range(k):
        for j in range(k):
            if i != j:
                delta = [0] * k
                delta[i], delta[j] = step, -step
                yield delta
