"""Energy against the number of rounds, and the best round count M*."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

from .dp import DPGrid, TrellisDP, run_dp
from .dplinear import LinearDelayTrellis, default_linear_grid, run_dp_linear_delay
from .model import HarqError, OptimizationResult, ProblemSpec
from .solvers import latency_budget, one_shot_optimum

log = logging.getLogger(__name__)


@dataclass
class SweepRow:
    rounds: int
    energy: float
    status: str
    result: OptimizationResult | None = None


@dataclass
class MSweep:
    rows: list[SweepRow] = field(default_factory=list)

    @property
    def m_star(self) -> int | None:
        """Round count with the least energy; ties go to the smaller M."""
        best = None
        for row in self.rows:
            if row.status != "ok":
                continue
            if best is None or row.energy < best.energy:
                best = row
        return None if best is None else best.rounds

    def energies(self) -> dict[int, float]:
        return {row.rounds: row.energy for row in self.rows}


def _budget_ok(spec: ProblemSpec) -> bool:
    try:
        spec.with_rounds(spec.rounds)
        latency_budget(spec)
    except HarqError:
        return False
    return True


def sweep_optimal_m(
    spec: ProblemSpec,
    m_max: int,
    grid: DPGrid | None = None,
    polish: bool | None = None,
) -> MSweep:
    """Optimize M = 1..m_max rounds for the budget, payload and delay of ``spec``.

    Layers of the trellis do not depend on M (nor, for constant delay, on the
    budget that is left), so rounds M >= 3 share one trellis. Round counts that
    the budget cannot host are reported with status "infeasible".
    """
    if m_max < 1:
        raise ValueError("m_max must be >= 1")
    sweep = MSweep()
    specs = {}
    for m in range(1, m_max + 1):
        try:
            specs[m] = spec.with_rounds(m)
            latency_budget(specs[m])
        except HarqError as exc:
            specs.pop(m, None)
            log.info("M=%d infeasible: %s", m, exc)
    linear = spec.delay_model.kind == "linear" and spec.delay_model.value > 0
    deep = [m for m in specs if m >= 3]
    engine = None
    if linear and specs:
        top = specs[max(specs)]
        engine = LinearDelayTrellis(top, default_linear_grid(top, grid))
    elif deep:
        # the largest budget among the deep round counts sets the grid
        first = specs[min(deep)]
        n_max = latency_budget(first).effective_total
        resolved = (grid or DPGrid()).resolve(specs[max(deep)], n_max=n_max)
        engine = TrellisDP(first, resolved)

    for m in range(1, m_max + 1):
        if m not in specs:
            sweep.rows.append(SweepRow(m, math.nan, "infeasible"))
            continue
        s = specs[m]
        try:
            if m == 1:
                res = one_shot_optimum(s)
            elif linear:
                res = run_dp_linear_delay(s, grid, engine=engine, polish=polish)
            elif m == 2:
                res = run_dp(s, grid, polish=polish)
            else:
                res = run_dp(s, grid, engine=engine, polish=polish)
        except HarqError as exc:
            log.info("M=%d failed: %s", m, exc)
            sweep.rows.append(SweepRow(m, math.nan, "infeasible"))
            continue
        sweep.rows.append(SweepRow(m, res.energy, "ok", res))
    return sweep
