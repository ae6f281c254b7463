"""Trellis DP when the feedback delay grows linearly with the symbols received.

After round m the receiver needs r * N_net_m channel uses to decode and
acknowledge, where N_net_m counts symbols only. The latency coordinate of a
state is therefore the consumed latency L_m (symbols plus delays so far), and
the net symbol count travels along as an extra attribute of each stored path.

States are pushed forward: every stored state is extended by every
blocklength on the n axis and every dispersion target on the V axis. Margins
are carried exactly and only the table key is quantised. A stored state is
dropped when the same (V, c) cell was reached at least as cheaply with a
latency up to m*ceil(r) below it. The last round takes whatever latency is
left and its power comes from the reliability target, so the final round
needs no V grid at all.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .dp import DPGrid, StateGrid, package_result
from .fbl import q_func
from .model import InfeasibleSpecError, OptimizationResult, ProblemSpec, RoundPlan
from .solvers import latency_budget, solve_last_power

log = logging.getLogger(__name__)

_C_TOL = 1e-12
# candidates evaluated per vectorised block
_BLOCK = 2_000_000
_COLUMNS = ("key", "net", "latency", "v", "c", "energy", "blocklength", "power", "pred")


@dataclass
class LatencyLayer:
    """Stored paths after round m, at most one per (latency bin, V cell, c cell).

    ``pred`` indexes the previous layer's arrays (-1 in the first layer).
    """

    m: int
    key: np.ndarray
    net: np.ndarray
    latency: np.ndarray
    v: np.ndarray
    c: np.ndarray
    energy: np.ndarray
    blocklength: np.ndarray
    power: np.ndarray
    pred: np.ndarray

    def __len__(self) -> int:
        return int(self.energy.size)


def _reduce(cols: dict) -> dict:
    """Keep the cheapest candidate per key; ties go to the earliest candidate."""
    key = cols["key"]
    order = np.lexsort((np.arange(key.size), cols["energy"], key))
    sorted_key = key[order]
    first = np.ones(key.size, dtype=bool)
    first[1:] = sorted_key[1:] != sorted_key[:-1]
    keep = order[first]
    return {name: arr[keep] for name, arr in cols.items()}


def _concat(parts: list[dict]) -> dict:
    if not parts:
        return {
            name: np.zeros(0, dtype=np.int64 if name in ("key", "net", "blocklength", "pred") else float)
            for name in _COLUMNS
        }
    return {name: np.concatenate([p[name] for p in parts]) for name in _COLUMNS}


@dataclass
class LinearDelayTrellis:
    """Layers shared by every round count for one (B, N, T_rel, r)."""

    spec: ProblemSpec
    grid: StateGrid
    layers: dict[int, LatencyLayer] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.r = float(self.spec.delay_model.value)
        self.budget = int(self.spec.latency_budget)
        self.bin = float(self.grid.n_step)
        self.v_axis = self.grid.v_axis
        self.c_axis = self.grid.c_axis
        self.c_step = self.grid.c_step
        self.n_axis = self.grid.n_axis
        self.n_v = self.v_axis.size + 1
        self.n_c = self.c_axis.size

    def _key(self, latency, j, k):
        lbin = np.ceil(latency / self.bin - 1e-9).astype(np.int64)
        return (lbin * self.n_v + j) * self.n_c + k

    def _room(self, net, latency):
        """Latency left over after one more round of n_min symbols."""
        n_min = self.grid.n_min
        return self.budget - latency - (1.0 + self.r) * n_min - self.r * net

    def first_layer(self) -> LatencyLayer:
        nn, cc = np.meshgrid(self.n_axis.astype(float), self.c_axis[:-1], indexing="ij")
        nn, cc = nn.ravel(), cc.ravel()
        p = solve_last_power(-self.grid.payload_nats, 0.0, nn, cc)
        latency = (1.0 + self.r) * nn
        ok = np.isfinite(p) & (self._room(nn, latency) >= 0)
        nn, cc, p, latency = nn[ok], cc[ok], p[ok], latency[ok]
        v = -nn * np.expm1(-2.0 * np.log1p(p))
        j = np.clip(np.rint(v / self.grid.theta_V), 0, self.n_v - 1).astype(np.int64)
        k = np.rint(cc / self.c_step).astype(np.int64)
        cols = {
            "key": self._key(latency, j, k),
            "net": nn.astype(np.int64),
            "latency": latency,
            "v": v,
            "c": cc,
            "energy": nn * p,
            "blocklength": nn.astype(np.int64),
            "power": p,
            "pred": np.full(nn.size, -1, dtype=np.int64),
        }
        return LatencyLayer(m=1, **_reduce(cols))

    def _extend(self, prev: LatencyLayer, idx: np.ndarray) -> dict:
        """All admissible one-round extensions of the states ``idx``."""
        n_axis = self.n_axis.astype(float)
        v0, c0 = prev.v[idx], prev.c[idx]
        dv = self.v_axis[None, None, :] - v0[:, None, None]
        net = prev.net[idx][:, None] + n_axis[None, :]
        latency = prev.latency[idx][:, None] + n_axis[None, :] + self.r * net
        room_ok = self._room(net, latency) >= 0
        ok = (dv >= 0) & (dv < n_axis[None, :, None]) & room_ok[:, :, None]
        s, a, b = np.nonzero(ok)
        n_sel = n_axis[a]
        t = -0.5 * np.log1p(-dv[s, 0, b] / n_sel)
        v_new = self.v_axis[b]
        c_new = (c0[s] * np.sqrt(v0[s]) + n_sel * t) / np.sqrt(v_new)
        ok = (c_new >= -_C_TOL) & (c_new <= self.grid.c_final + _C_TOL)
        ok &= v_new <= self.grid.v_bound(c_new)
        s, a, b, t, c_new, n_sel = s[ok], a[ok], b[ok], t[ok], c_new[ok], n_sel[ok]
        src = idx[s]
        power = np.expm1(t)
        lat = latency[s, a]
        k = np.clip(np.rint(c_new / self.c_step), 0, self.n_c - 1).astype(np.int64)
        j = b + 1
        return {
            "key": self._key(lat, j, k),
            "net": prev.net[src] + n_sel.astype(np.int64),
            "latency": lat,
            "v": v_new,
            "c": c_new,
            "energy": prev.energy[src] + n_sel * power * q_func(prev.c[src]),
            "blocklength": n_sel.astype(np.int64),
            "power": power,
            "pred": src.astype(np.int64),
        }

    def _prune(self, cols: dict, m: int) -> dict:
        """Drop states matched at lower cost by a (V, c) twin up to m*ceil(r) earlier."""
        if cols["key"].size == 0:
            return cols
        cell = cols["key"] % (self.n_v * self.n_c)
        lbin = cols["key"] // (self.n_v * self.n_c)
        width = max(1, int(math.ceil(m * math.ceil(self.r - 1e-12) / self.bin - 1e-9)))
        table = np.full((int(lbin.max()) + 1, self.n_v * self.n_c), np.inf)
        table[lbin, cell] = cols["energy"]
        earlier = np.full_like(table, np.inf)
        for s in range(1, width + 1):
            earlier[s:] = np.minimum(earlier[s:], table[:-s])
        keep = earlier[lbin, cell] > cols["energy"]
        return {name: arr[keep] for name, arr in cols.items()}

    def step(self, prev: LatencyLayer, m: int) -> LatencyLayer:
        per_state = max(1, self.n_axis.size * self.v_axis.size)
        block = max(1, _BLOCK // per_state)
        parts = []
        for start in range(0, len(prev), block):
            idx = np.arange(start, min(len(prev), start + block))
            parts.append(_reduce(self._extend(prev, idx)))
        cols = self._prune(_reduce(_concat(parts)), m)
        return LatencyLayer(m=m, **cols)

    def layer(self, m: int) -> LatencyLayer:
        if m not in self.layers:
            self.layers[m] = self.first_layer() if m == 1 else self.step(self.layer(m - 1), m)
            log.debug("linear-delay layer %d: %d states", m, len(self.layers[m]))
        return self.layers[m]

    def solve(self, rounds: int) -> tuple[RoundPlan, float]:
        """Best plan with ``rounds`` rounds and its table energy."""
        if rounds < 2:
            raise ValueError("the trellis starts at two rounds")
        prev = self.layer(rounds - 1)
        if len(prev) == 0:
            raise InfeasibleSpecError("no grid path survives the latency budget")
        slack = (self.budget - prev.latency - self.r * prev.net) / (1.0 + self.r)
        n_last = np.floor(np.round(slack, 9)).astype(np.int64)
        fits = n_last >= self.grid.n_min
        sqrt_v = np.sqrt(prev.v)
        p_last = solve_last_power(prev.c * sqrt_v, prev.v, np.maximum(n_last, 1), self.grid.c_final)
        done = prev.c >= self.grid.c_final - _C_TOL
        p_last = np.where(done, 0.0, p_last)
        energy = np.where(
            fits & np.isfinite(p_last), prev.energy + n_last * p_last * q_func(prev.c), np.inf
        )
        best = int(np.argmin(energy))
        if not np.isfinite(energy[best]):
            raise InfeasibleSpecError("no grid path reaches the reliability target")
        ns, ps = [int(n_last[best])], [float(p_last[best])]
        i, table = best, prev
        while True:
            ns.append(int(table.blocklength[i]))
            ps.append(float(table.power[i]))
            if table.m == 1:
                break
            i = int(table.pred[i])
            table = self.layers[table.m - 1]
        return RoundPlan(ns[::-1], ps[::-1]), float(energy[best])


def default_linear_grid(spec: ProblemSpec, grid: DPGrid | None) -> StateGrid:
    """Coarse defaults for the pushed trellis (it is always polished afterwards)."""
    grid = grid or DPGrid()
    n = spec.latency_budget
    return DPGrid(
        theta_V=grid.theta_V if grid.theta_V is not None else n / 32.0,
        theta_c=grid.theta_c if grid.theta_c is not None else None,
        n_step=grid.n_step if grid.n_step is not None else max(1, n // 50),
    ).resolve(spec.with_rounds(max(3, spec.rounds)), n_max=n)


def run_dp_linear_delay(
    spec: ProblemSpec,
    grid: DPGrid | None = None,
    engine: LinearDelayTrellis | None = None,
    polish: bool | None = None,
) -> OptimizationResult:
    """Energy-minimal plan under the linear feedback-delay model."""
    if spec.delay_model.kind != "linear":
        raise ValueError("run_dp_linear_delay needs a linear delay model")
    latency_budget(spec)
    if spec.rounds == 1:
        from .solvers import one_shot_optimum

        return one_shot_optimum(spec)
    if engine is None:
        engine = LinearDelayTrellis(spec, default_linear_grid(spec, grid))
    plan, table_energy = engine.solve(spec.rounds)
    meta = engine.grid.meta()
    meta["latency_bin"] = engine.bin
    meta["table_energy"] = table_energy
    return package_result(spec, plan, "dp-linear", meta, True if polish is None else bool(polish))
