"""Quantised-state dynamic programming over the IR-HARQ trellis.

The state after round m is (N_m, V_m, c_m): symbols sent so far, the
dispersion sum, and the margin c_m = Q^{-1}(eps_m). Each layer stores, for
every reachable grid state, the least average energy of a path reaching it
and a back-pointer. Layer 2 is built exactly (a one-dimensional scan over
N_1 with the two remaining unknowns solved in closed loop); later layers
pull from their predecessors through the inverse margin recursion, snapping
the predecessor margin to the grid for the table lookup only.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .fbl import average_energy, per_round_outage, q_func, q_inv
from .model import (
    DelayModel,
    InfeasibleSpecError,
    NoSolutionError,
    OptimizationResult,
    ProblemSpec,
    RoundPlan,
)
from .polish import polish_plan
from .solvers import latency_budget, latency_used, one_shot_optimum, solve_power_bisection

log = logging.getLogger(__name__)

_C_TOL = 1e-12


@dataclass(frozen=True)
class DPGrid:
    """Requested quantisation. ``None`` picks the defaults for the spec at hand.

    Two-round problems default to theta_c = c_M/256, theta_V = budget/512 and
    unit blocklength steps. Deeper trellises default to a coarse grid
    (c_M/16, budget/32, budget/50) whose answer is then polished locally.
    """

    theta_V: float | None = None
    theta_c: float | None = None
    n_step: int | None = None

    def resolve(self, spec: ProblemSpec, n_max: int | None = None) -> StateGrid:
        budget = latency_budget(spec).effective_total if n_max is None else n_max
        c_final = q_inv(spec.outage_target)
        fine = spec.rounds <= 2
        theta_c = self.theta_c if self.theta_c is not None else c_final / (256.0 if fine else 16.0)
        theta_V = self.theta_V if self.theta_V is not None else budget / (512.0 if fine else 32.0)
        if self.n_step is not None:
            n_step = self.n_step
        else:
            n_step = 1 if fine else max(1, budget // 50)
        return StateGrid(
            theta_V=float(theta_V),
            theta_c=float(theta_c),
            n_step=int(n_step),
            n_min=spec.min_blocklength,
            n_max=int(budget),
            c_final=c_final,
            payload_nats=spec.payload_nats,
        )

    def to_dict(self) -> dict:
        return {"theta_V": self.theta_V, "theta_c": self.theta_c, "n_step": self.n_step}


@dataclass(frozen=True)
class StateGrid:
    theta_V: float
    theta_c: float
    n_step: int
    n_min: int
    n_max: int
    c_final: float
    payload_nats: float

    def __post_init__(self) -> None:
        if self.theta_V <= 0 or self.theta_c <= 0 or self.n_step < 1:
            raise ValueError("grid steps must be positive")

    @property
    def n_axis(self) -> np.ndarray:
        return np.arange(self.n_min, self.n_max + 1, self.n_step, dtype=np.int64)

    @property
    def v_axis(self) -> np.ndarray:
        count = int(math.floor(self.n_max / self.theta_V + 1e-9))
        return self.theta_V * np.arange(1, count + 1, dtype=float)

    @property
    def c_axis(self) -> np.ndarray:
        # the top point is the final margin itself, whatever theta_c says
        k = max(1, int(math.ceil(self.c_final / self.theta_c - 1e-9)))
        return self.c_final * np.arange(0, k + 1, dtype=float) / k

    @property
    def c_step(self) -> float:
        axis = self.c_axis
        return float(axis[1] - axis[0])

    def v_bound(self, c):
        """Largest dispersion sum compatible with margin ``c``.

        Follows from sum n ln(1+P) >= V/2 and sum n ln(1+P) - B ln2 = c sqrt(V).
        """
        c = np.asarray(c, dtype=float)
        root = c + np.sqrt(c * c + 2.0 * self.payload_nats)
        return root * root

    def meta(self) -> dict:
        return {
            "theta_V": self.theta_V,
            "theta_c": self.c_step,
            "n_step": self.n_step,
            "n_states": int(self.n_axis.size * self.v_axis.size * self.c_axis.size),
        }


@dataclass
class LayerTable:
    """Best energies into the grid states of one round.

    Arrays are indexed ``[n, v, c]`` against ``n_values``, ``v_values`` and
    ``c_values``. Unreachable states are absent: ``present`` is False there
    and ``lookup`` raises ``KeyError``. For round 2 the back-pointer is the
    first-round blocklength and power; for later rounds it is the index
    triple of the predecessor in the previous table.
    """

    m: int
    n_values: np.ndarray
    v_values: np.ndarray
    c_values: np.ndarray
    energy: np.ndarray
    blocklength: np.ndarray
    power: np.ndarray
    pred: np.ndarray
    first_blocklength: np.ndarray | None = None
    first_power: np.ndarray | None = None

    @property
    def present(self) -> np.ndarray:
        return np.isfinite(self.energy)

    def __len__(self) -> int:
        return int(np.count_nonzero(self.present))

    def index(self, n: int, v: float, c: float) -> tuple[int, int, int]:
        i = np.flatnonzero(self.n_values == n)
        j = np.flatnonzero(np.isclose(self.v_values, v, rtol=0, atol=1e-9))
        k = np.flatnonzero(np.isclose(self.c_values, c, rtol=0, atol=1e-9))
        if not (i.size and j.size and k.size):
            raise KeyError((n, v, c))
        return int(i[0]), int(j[0]), int(k[0])

    def __contains__(self, key) -> bool:
        try:
            idx = self.index(*key)
        except KeyError:
            return False
        return bool(self.present[idx])

    def lookup(self, n: int, v: float, c: float) -> float:
        idx = self.index(n, v, c)
        if not self.present[idx]:
            raise KeyError((n, v, c))
        return float(self.energy[idx])

    def states(self):
        """Yield ``((N, V, c), energy)`` for every present state."""
        for i, j, k in zip(*np.nonzero(self.present)):
            yield (
                (int(self.n_values[i]), float(self.v_values[j]), float(self.c_values[k])),
                float(self.energy[i, j, k]),
            )


def _empty_layer(m, n_values, v_values, c_values, first=False) -> LayerTable:
    shape = (len(n_values), len(v_values), len(c_values))
    return LayerTable(
        m=m,
        n_values=np.asarray(n_values, dtype=np.int64),
        v_values=np.asarray(v_values, dtype=float),
        c_values=np.asarray(c_values, dtype=float),
        energy=np.full(shape, np.inf),
        blocklength=np.zeros(shape, dtype=np.int64),
        power=np.full(shape, np.nan),
        pred=np.full(shape + (3,), -1, dtype=np.int32),
        first_blocklength=np.zeros(shape, dtype=np.int64) if first else None,
        first_power=np.full(shape, np.nan) if first else None,
    )


def _disp_gap(t1, n1, n2, v2, info):
    """Dispersion excess of a two-round split carrying ``info`` nats, and its slope in t1."""
    t2 = (info - n1 * t1) / n2
    e1, e2 = np.exp(-2.0 * t1), np.exp(-2.0 * t2)
    g = n1 * (1.0 - e1) + n2 * (1.0 - e2) - v2
    return g, 2.0 * n1 * (e1 - e2)


def _safeguarded_newton(a, b, n1, n2, v2, info, iters=100):
    """Root of the dispersion gap between ``a`` (gap <= 0) and ``b`` (gap >= 0).

    Newton steps that leave the bracket fall back to bisection; converged
    entries drop out of the working set.
    """
    x = a.copy()
    lo, hi = a.copy(), b.copy()
    act = np.arange(x.size)
    for _ in range(iters):
        xa, la, ha = x[act], lo[act], hi[act]
        g, dg = _disp_gap(xa, n1[act], n2[act], v2[act], info[act])
        neg = g <= 0
        la = np.where(neg, xa, la)
        ha = np.where(neg, ha, xa)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = xa - g / dg
        inside = (step - la) * (step - ha) < 0
        x_new = np.where(g == 0, xa, np.where(inside, step, 0.5 * (la + ha)))
        done = np.abs(x_new - xa) <= 1e-15 * np.abs(xa) + 1e-300
        x[act], lo[act], hi[act] = x_new, la, ha
        act = act[~done]
        if act.size == 0:
            break
    return x


def _two_round_roots(n1, n2, v2, info):
    """Per-symbol information t = ln(1+P) of the first of two rounds with
    n1*t1 + n2*t2 = info whose dispersions add up to v2.

    The dispersion sum is concave in t1 with its peak at t1 = t2, so there are
    up to two solutions; the low-t1 one is returned first. Missing roots are NaN.
    """
    shape = np.broadcast_shapes(*(np.shape(x) for x in (n1, n2, v2, info)))
    n1, n2, v2, info = (
        np.broadcast_to(np.asarray(x, float), shape).ravel() for x in (n1, n2, v2, info)
    )
    t_bar = info / (n1 + n2)
    peak, _ = _disp_gap(t_bar, n1, n2, v2, info)
    feasible = (info > 0) & (peak >= 0)
    roots = []
    for edge in (np.zeros_like(t_bar), info / n1):
        g_edge, _ = _disp_gap(edge, n1, n2, v2, info)
        idx = np.flatnonzero(feasible & (g_edge <= 0))
        out = np.full(n1.shape, np.nan)
        if idx.size:
            out[idx] = _safeguarded_newton(
                edge[idx], t_bar[idx], n1[idx], n2[idx], v2[idx], info[idx]
            )
        roots.append(out.reshape(shape))
    return roots


def _init_candidates(grid: StateGrid, n2_total: int, v2, c2, n1):
    """Energies of every (V_2, c_2, N_1, branch) combination for round-2 targets
    holding ``n2_total`` symbols. Output arrays have shape (len(v2), len(c2), len(n1), 2).
    """
    v = np.asarray(v2, float)[:, None, None]
    c = np.asarray(c2, float)[None, :, None]
    n1 = np.asarray(n1, float)[None, None, :]
    n2 = n2_total - n1
    info = grid.payload_nats + c * np.sqrt(v)
    left, right = _two_round_roots(n1, n2, v, info)
    t1 = np.stack([left, right], axis=-1)
    n1b, n2b, infob = n1[..., None], n2[..., None], info[..., None]
    t2 = np.maximum((infob - n1b * t1) / n2b, 0.0)
    p1 = np.expm1(t1)
    p2 = np.expm1(t2)
    with np.errstate(divide="ignore", invalid="ignore"):
        c1 = (n1b * t1 - grid.payload_nats) / np.sqrt(-n1b * np.expm1(-2.0 * t1))
    ok = np.isfinite(c1) & (t1 > 0) & (c1 >= -_C_TOL) & (c1 <= grid.c_final + _C_TOL)
    energy = np.where(ok, n1b * p1 + n2b * p2 * q_func(np.where(ok, c1, 0.0)), np.inf)
    n1_out = np.broadcast_to(n1b, energy.shape)
    return energy, n1_out, p1, p2


def init_layer2(
    spec: ProblemSpec,
    grid: StateGrid,
    n_targets=None,
    v_targets=None,
    c_targets=None,
) -> LayerTable:
    """Round-2 table: for each target (N_2, V_2, c_2) minimise over N_1 alone.

    With N_1 fixed, the dispersion and margin of the target pin both powers
    (up to the two branches of a convex equation), so no quantisation enters
    this layer.
    """
    n_axis = grid.n_axis
    n_targets = n_axis[n_axis >= 2 * grid.n_min] if n_targets is None else np.asarray(n_targets)
    v_targets = grid.v_axis if v_targets is None else np.asarray(v_targets, float)
    c_targets = grid.c_axis if c_targets is None else np.asarray(c_targets, float)
    layer = _empty_layer(2, n_targets, v_targets, c_targets, first=True)

    v_ok = v_targets[:, None] <= grid.v_bound(c_targets)[None, :]
    for i, n2_total in enumerate(layer.n_values):
        n1 = n_axis[n_axis <= n2_total - grid.n_min]
        if n1.size == 0:
            continue
        rows = np.flatnonzero(v_targets < n2_total)
        if rows.size == 0:
            continue
        # chunk the V axis to bound memory
        chunk = max(1, 2_000_000 // (n1.size * c_targets.size * 2))
        for start in range(0, rows.size, chunk):
            js = rows[start : start + chunk]
            energy, n1s, p1, p2 = _init_candidates(
                grid, int(n2_total), v_targets[js], c_targets, n1
            )
            flat = energy.reshape(energy.shape[:2] + (-1,))
            best = np.argmin(flat, axis=-1)
            e_best = np.take_along_axis(flat, best[..., None], -1)[..., 0]
            sel = np.isfinite(e_best) & v_ok[js]
            jj, kk = np.nonzero(sel)
            b = best[jj, kk]
            layer.energy[i, js[jj], kk] = e_best[jj, kk]
            layer.first_blocklength[i, js[jj], kk] = n1s.reshape(flat.shape)[jj, kk, b]
            layer.first_power[i, js[jj], kk] = p1.reshape(flat.shape)[jj, kk, b]
            layer.power[i, js[jj], kk] = p2.reshape(flat.shape)[jj, kk, b]
            layer.blocklength[i, js[jj], kk] = int(n2_total) - layer.first_blocklength[i, js[jj], kk]
    return layer


def dp_layer_step(
    prev: LayerTable,
    grid: StateGrid,
    m: int,
    n_targets=None,
    v_targets=None,
    c_targets=None,
) -> LayerTable:
    """Bellman update for round ``m`` from the round ``m-1`` table.

    For every target (N_m, V_m, c_m) and every stored predecessor cell
    (N_{m-1}, V_{m-1}) with n_min <= N_m - N_{m-1} and
    V_m - n_m <= V_{m-1} <= V_m, the predecessor margin follows uniquely from
    the inverse recursion. It must land in [0, c_final]; its nearest grid
    point selects the table entry while the exact value prices the round.
    """
    if m < 3:
        raise ValueError("rounds 1-2 come from init_layer2")
    n_axis = grid.n_axis
    if n_targets is None:
        n_targets = n_axis[n_axis >= m * grid.n_min]
    n_targets = np.asarray(n_targets, dtype=np.int64)
    v_targets = grid.v_axis if v_targets is None else np.asarray(v_targets, float)
    c_targets = grid.c_axis if c_targets is None else np.asarray(c_targets, float)
    layer = _empty_layer(m, n_targets, v_targets, c_targets)

    prev_any = prev.present.any(axis=2)
    n_prev = prev.n_values.astype(float)
    v_prev = prev.v_values
    c_step = float(prev.c_values[1] - prev.c_values[0])
    k_max = prev.c_values.size - 1
    v_ok = v_targets[:, None] <= grid.v_bound(c_targets)[None, :]

    for i, n_tot in enumerate(n_targets):
        n_round = n_tot - n_prev
        for j, v_tot in enumerate(v_targets):
            if v_tot >= n_tot:
                break
            dv = v_tot - v_prev
            mask = (
                prev_any
                & (n_round >= grid.n_min)[:, None]
                & (dv >= 0)[None, :]
                & (dv[None, :] < n_round[:, None])
            )
            ip, jp = np.nonzero(mask)
            if ip.size == 0:
                continue
            n_r = n_round[ip]
            t = -0.5 * np.log1p(-dv[jp] / n_r)
            sq_prev = np.sqrt(v_prev[jp])
            c_prev = (np.sqrt(v_tot) * c_targets[None, :] - (n_r * t)[:, None]) / sq_prev[:, None]
            ok = (c_prev >= -_C_TOL) & (c_prev <= grid.c_final + _C_TOL)
            kp = np.clip(np.rint(c_prev / c_step), 0, k_max).astype(np.int64)
            e_prev = prev.energy[ip[:, None], jp[:, None], kp]
            p_round = np.expm1(t)
            cand = np.where(ok, e_prev + (n_r * p_round)[:, None] * q_func(c_prev), np.inf)
            # first minimum along the predecessor axis = smallest N_{m-1}, then V_{m-1}
            best = np.argmin(cand, axis=0)
            cols = np.arange(c_targets.size)
            e_best = cand[best, cols]
            sel = np.isfinite(e_best) & v_ok[j]
            if not np.any(sel):
                continue
            ks = cols[sel]
            b = best[sel]
            layer.energy[i, j, ks] = e_best[sel]
            layer.blocklength[i, j, ks] = n_r[b].astype(np.int64)
            layer.power[i, j, ks] = p_round[b]
            layer.pred[i, j, ks, 0] = ip[b]
            layer.pred[i, j, ks, 1] = jp[b]
            layer.pred[i, j, ks, 2] = kp[b, ks]
    return layer


@dataclass
class TrellisDP:
    """Layer tables shared by every round count and budget up to ``grid.n_max``.

    Intermediate layers do not depend on M or on the final budget, so an
    M-sweep builds each one once.
    """

    spec: ProblemSpec
    grid: StateGrid
    layers: dict[int, LayerTable] = field(default_factory=dict)
    cache_dir: str | None = None

    def layer(self, m: int) -> LayerTable:
        if m not in self.layers:
            cached = self._load(m)
            if cached is not None:
                self.layers[m] = cached
            elif m == 2:
                self.layers[2] = init_layer2(self.spec, self.grid)
            else:
                self.layers[m] = dp_layer_step(self.layer(m - 1), self.grid, m)
            if cached is None and self.cache_dir is not None:
                from .cache import cache_path, dump_layer

                dump_layer(self.layers[m], cache_path(self.cache_dir, self.spec, self.grid, m), self.spec, self.grid)
            log.debug("layer %d: %d states", m, len(self.layers[m]))
        return self.layers[m]

    def _load(self, m: int) -> LayerTable | None:
        if self.cache_dir is None:
            return None
        from .cache import CacheMismatchError, cache_path, load_layer

        path = cache_path(self.cache_dir, self.spec, self.grid, m)
        try:
            return load_layer(path, self.spec, self.grid)
        except FileNotFoundError:
            return None
        except CacheMismatchError as exc:
            log.warning("ignoring layer cache: %s", exc)
            return None

    def final_layer(self, rounds: int, budget: int) -> LayerTable:
        """Targets with all symbols spent and the margin at its final value."""
        n_t = np.array([budget])
        c_t = np.array([self.grid.c_final])
        if rounds == 2:
            return init_layer2(self.spec, self.grid, n_t, None, c_t)
        return dp_layer_step(self.layer(rounds - 1), self.grid, rounds, n_t, None, c_t)

    def backtrack(self, final: LayerTable, rounds: int) -> RoundPlan:
        flat = int(np.argmin(final.energy))
        if not np.isfinite(final.energy.flat[flat]):
            raise InfeasibleSpecError("no grid path reaches the reliability target")
        idx = np.unravel_index(flat, final.energy.shape)
        table = final
        ns, ps = [], []
        for m in range(rounds, 2, -1):
            ns.append(int(table.blocklength[idx]))
            ps.append(float(table.power[idx]))
            idx = tuple(int(x) for x in table.pred[idx])
            table = self.layer(m - 1)
        ns += [int(table.blocklength[idx]), int(table.first_blocklength[idx])]
        ps += [float(table.power[idx]), float(table.first_power[idx])]
        return RoundPlan(ns[::-1], ps[::-1])

    def solve(self, rounds: int, budget: int) -> tuple[RoundPlan, float]:
        """Backtracked plan and the table energy for ``rounds`` rounds in ``budget`` symbols."""
        if rounds < 2:
            raise ValueError("the trellis starts at two rounds")
        final = self.final_layer(rounds, budget)
        plan = self.backtrack(final, rounds)
        return plan, float(np.min(final.energy))


def finalize_plan(plan: RoundPlan, spec: ProblemSpec) -> tuple[RoundPlan, list[str]]:
    """Re-solve the last power so the reliability target holds exactly."""
    warnings = []
    try:
        p_last = solve_power_bisection(
            plan.blocklengths[:-1], plan.powers[:-1], plan.blocklengths[-1],
            spec.payload_bits, spec.outage_target,
        )
    except NoSolutionError:
        p_last = 0.0
        warnings.append("earlier rounds already meet the target; last round left silent")
    return RoundPlan(plan.blocklengths, plan.powers[:-1] + (p_last,)), warnings


def _wants_polish(spec: ProblemSpec, polish: bool | None) -> bool:
    return spec.rounds >= 3 if polish is None else bool(polish)


def package_result(
    spec: ProblemSpec,
    plan: RoundPlan,
    method: str,
    meta: dict,
    polish: bool,
    warnings: list[str] | None = None,
) -> OptimizationResult:
    """Re-solve the last power, optionally polish, and wrap up a grid answer."""
    plan, warns = finalize_plan(plan, spec)
    warnings = list(warnings or []) + warns
    meta = dict(meta)
    meta["grid_energy"] = average_energy(plan, spec.payload_bits)
    meta["polished"] = polish
    if polish:
        plan = polish_plan(spec, plan, max_step=max(1, int(meta.get("n_step", 1))))
    return OptimizationResult(
        plan=plan,
        per_round_eps=per_round_outage(plan, spec.payload_bits),
        energy=average_energy(plan, spec.payload_bits),
        latency_used=latency_used(plan, spec),
        budget=spec.latency_budget,
        delay_model=spec.delay_model,
        method=method,
        grid_meta=meta,
        warnings=warnings,
    )


def run_dp(
    spec: ProblemSpec,
    grid: DPGrid | None = None,
    engine: TrellisDP | None = None,
    polish: bool | None = None,
) -> OptimizationResult:
    """Energy-minimal plan by dynamic programming.

    ``polish`` runs a local search from the backtracked plan; by default it
    is on for three or more rounds, where the default grid is coarse.
    """
    if spec.delay_model.kind == "linear" and spec.delay_model.value > 0:
        from .dplinear import run_dp_linear_delay

        return run_dp_linear_delay(spec, grid, polish=polish)
    if spec.delay_model.kind == "linear":
        # r = 0 charges no delay at all
        spec = spec.with_delay(DelayModel.none())
    if spec.rounds == 1:
        return one_shot_optimum(spec)
    budget = latency_budget(spec).effective_total
    grid = grid or DPGrid()
    if engine is None:
        engine = TrellisDP(spec, grid.resolve(spec))
    plan, table_energy = engine.solve(spec.rounds, budget)
    meta = engine.grid.meta()
    meta["table_energy"] = table_energy
    return package_result(spec, plan, "dp", meta, _wants_polish(spec, polish))
