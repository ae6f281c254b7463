"""Exhaustive search over quantised powers and all blocklength splits.

Used as the reference optimizer for small M and to tabulate the M=2
objective surface. The last round's blocklength follows from the latency
equality and its power from the reliability equality.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .fbl import average_energy, dispersion_per_symbol, per_round_outage, q_func, q_inv
from .model import (
    InfeasibleSpecError,
    OptimizationResult,
    ProblemSpec,
    RoundPlan,
)
from .solvers import (
    last_round_blocklength,
    latency_budget,
    latency_used,
    one_shot_optimum,
    solve_last_power,
    solve_power_bisection,
)

log = logging.getLogger(__name__)

MAX_ROUNDS = 3


@dataclass(frozen=True)
class SearchGrid:
    power_step: float = 0.01
    power_max: float = 1e3
    n_step: int = 1

    def __post_init__(self) -> None:
        if not self.power_step > 0:
            raise ValueError("power_step must be positive")
        if not self.power_max > self.power_step:
            raise ValueError("power_max must exceed power_step")
        if self.n_step < 1:
            raise ValueError("n_step must be >= 1")

    def powers(self) -> np.ndarray:
        """Geometric ladder exp(-k*step) below 1, arithmetic 1 + k*step above.

        Halving the step gives a superset of the coarser ladder.
        """
        theta = self.power_step
        k_low = int(math.floor(-math.log(theta) / theta + 1e-9))
        low = np.exp(-theta * np.arange(k_low, 0, -1))
        k_high = int(math.floor((self.power_max - 1.0) / theta + 1e-9))
        high = 1.0 + theta * np.arange(0, k_high + 1)
        return np.concatenate([low[low >= theta * (1 - 1e-12)], high])

    def meta(self) -> dict:
        return {"theta": self.power_step, "power_max": self.power_max, "n_step": self.n_step}


def _prefix_blocklengths(spec: ProblemSpec, grid: SearchGrid, total: int) -> Iterable[tuple[int, ...]]:
    n_min = spec.min_blocklength
    axis = range(n_min, total, grid.n_step)
    for prefix in itertools.product(axis, repeat=spec.rounds - 1):
        if last_round_blocklength(spec, prefix, total) >= n_min:
            yield prefix


def _evaluate_prefix(spec, prefix_n, p_axes, n_last, c_target, power_max):
    """Energies of all power combinations for one blocklength prefix.

    ``p_axes`` holds one power vector per earlier round; the result arrays are
    flattened over their Cartesian product in C order.
    """
    mesh = np.meshgrid(*p_axes, indexing="ij")
    powers = [m.ravel() for m in mesh]
    info = -spec.payload_nats * np.ones_like(powers[0])
    disp = np.zeros_like(powers[0])
    energy = np.zeros_like(powers[0])
    eps_prev = np.ones_like(powers[0])
    margin = np.full_like(powers[0], -np.inf)
    for n, p in zip(prefix_n, powers):
        energy += n * p * eps_prev
        info += n * np.log1p(p)
        disp += n * dispersion_per_symbol(p)
        margin = info / np.sqrt(disp)
        eps_prev = q_func(margin)
    p_last = solve_last_power(info, disp, n_last, c_target, power_max)
    energy = energy + n_last * p_last * eps_prev
    return powers, p_last, energy, eps_prev


def _upper_bound(spec, grid, total, c_target, powers):
    """Energy of some feasible grid point, used only to prune dominated cells."""
    best = math.inf
    prefixes = list(_prefix_blocklengths(spec, grid, total))
    stride = max(1, len(prefixes) // 24)
    coarse = powers[:: max(1, len(powers) // 400)]
    for prefix in prefixes[::stride]:
        n_last = last_round_blocklength(spec, prefix, total)
        _, _, energy, _ = _evaluate_prefix(
            spec, prefix, [coarse] * len(prefix), n_last, c_target, grid.power_max
        )
        if np.any(np.isfinite(energy)):
            best = min(best, float(np.nanmin(energy)))
    return best


def grid_search(spec: ProblemSpec, grid: SearchGrid | None = None) -> OptimizationResult:
    """Minimum average energy over the quantised feasible set (M <= 3)."""
    grid = grid or SearchGrid()
    if spec.rounds > MAX_ROUNDS:
        raise ValueError(f"exhaustive search is limited to M <= {MAX_ROUNDS}")
    if spec.rounds == 1:
        return one_shot_optimum(spec)

    total = latency_budget(spec).effective_total
    c_target = q_inv(spec.outage_target)
    powers = grid.powers()
    bound = _upper_bound(spec, grid, total, c_target, powers)

    best = (math.inf, None)
    for prefix in _prefix_blocklengths(spec, grid, total):
        n_last = last_round_blocklength(spec, prefix, total)
        # E >= n_1 P_1 + ..., so cells whose first-round energy alone exceeds a
        # known feasible energy can never win
        axes = [powers[powers * prefix[0] <= bound]] + [powers] * (len(prefix) - 1)
        if axes[0].size == 0:
            continue
        cand_p, p_last, energy, _ = _evaluate_prefix(
            spec, prefix, axes, n_last, c_target, grid.power_max
        )
        if not np.any(np.isfinite(energy)):
            continue
        i = int(np.nanargmin(energy))
        if energy[i] < best[0]:
            plan = RoundPlan(list(prefix) + [n_last], [float(p[i]) for p in cand_p] + [float(p_last[i])])
            best = (float(energy[i]), plan)

    energy, plan = best
    if plan is None:
        raise InfeasibleSpecError("no grid point satisfies the reliability target")
    # polish the last power with the scalar solver so both optimizers report alike
    p_last = solve_power_bisection(
        plan.blocklengths[:-1], plan.powers[:-1], plan.blocklengths[-1],
        spec.payload_bits, spec.outage_target,
    )
    plan = RoundPlan(plan.blocklengths, plan.powers[:-1] + (p_last,))
    warnings = []
    if max(plan.powers[:-1]) >= powers[-1]:
        msg = f"optimum touches the power grid ceiling {grid.power_max:g}"
        log.warning(msg)
        warnings.append(msg)
    return OptimizationResult(
        plan=plan,
        per_round_eps=per_round_outage(plan, spec.payload_bits),
        energy=average_energy(plan, spec.payload_bits),
        latency_used=latency_used(plan, spec),
        budget=spec.latency_budget,
        delay_model=spec.delay_model,
        method="brute-force",
        grid_meta=grid.meta(),
        warnings=warnings,
    )


SURFACE_COLUMNS = ("n1", "P1", "n2", "P2", "eps1", "energy", "status")


@dataclass(frozen=True)
class SurfaceCell:
    n1: int
    P1: float
    n2: int
    P2: float
    eps1: float
    energy: float
    status: str

    def row(self) -> tuple:
        return (self.n1, self.P1, self.n2, self.P2, self.eps1, self.energy, self.status)


def objective_surface(
    spec: ProblemSpec,
    n1_values: Iterable[int],
    p1_values: Iterable[float],
    power_max: float = 1e3,
) -> list[SurfaceCell]:
    """Average energy over an (n_1, P_1) table for M=2 with both constraints tight.

    Cells where no second-round power within ``power_max`` reaches the target
    (or where the first round already does) are kept and marked infeasible.
    """
    if spec.rounds != 2:
        raise ValueError("the objective surface is defined for M=2")
    total = latency_budget(spec).effective_total
    c_target = q_inv(spec.outage_target)
    p1 = np.asarray(list(p1_values), dtype=float)
    cells = []
    for n1 in n1_values:
        n1 = int(n1)
        n2 = last_round_blocklength(spec, (n1,), total)
        if n2 < 1:
            cells.extend(
                SurfaceCell(n1, float(p), n2, math.nan, math.nan, math.nan, "infeasible") for p in p1
            )
            continue
        (_,), p2, energy, eps1 = _evaluate_prefix(spec, (n1,), [p1], n2, c_target, power_max)
        for p, q, e, ep in zip(p1, p2, energy, eps1):
            ok = math.isfinite(e)
            cells.append(
                SurfaceCell(n1, float(p), n2, float(q), float(ep), float(e), "ok" if ok else "infeasible")
            )
    return cells


def surface_argmin(cells: list[SurfaceCell]) -> SurfaceCell:
    feasible = [c for c in cells if c.status == "ok"]
    if not feasible:
        raise InfeasibleSpecError("surface has no feasible cell")
    return min(feasible, key=lambda c: (c.energy, c.n1, c.P1))


def write_surface_csv(cells: list[SurfaceCell], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(SURFACE_COLUMNS)
    for c in cells:
        w.writerow(_fmt(v) for v in c.row())


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.12g}"
    return v
