"""Infinite-blocklength limit: optimal energy splits over M rounds.

As N grows without bound the outage after the first m rounds only depends on
the energy S_m = E_1 + ... + E_m spent so far, through
g(S) = Q((S - B ln2) / sqrt(2 S)). The average energy of a split is then

    r(E_1..E_M) = E_1 + sum_{m>=2} g(S_{m-1}) E_m

with S_M fixed to the one-shot energy E_inf. Since g is decreasing, r is an
upper Riemann sum of g over the partition 0 < S_1 < ... < S_M = E_inf, and
as M grows it approaches the integral of g over [0, E_inf].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize

from .fbl import e_noharq_infinity, q_func
from .model import LN2

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
# points of the cumulative-energy grid used to seed the local search
_SCAN_POINTS = 1500


@dataclass(frozen=True)
class EnergySplit:
    """Per-round energies E_1..E_M of an asymptotic plan."""

    energies: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "energies", tuple(float(e) for e in self.energies))
        if not self.energies:
            raise ValueError("a split needs at least one round")
        if any(not (e >= 0.0) for e in self.energies):
            raise ValueError("round energies must be non-negative")

    @property
    def rounds(self) -> int:
        return len(self.energies)

    @property
    def total(self) -> float:
        return float(math.fsum(self.energies))

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.energies)

    @classmethod
    def from_cumulative(cls, sums) -> EnergySplit:
        sums = np.asarray(sums, dtype=float)
        return cls(np.diff(np.concatenate([[0.0], sums])))


def outage_of_energy(s, payload_bits: float):
    """g(S): outage probability once a total energy S has been received."""
    s = np.asarray(s, dtype=float)
    b = payload_bits * LN2
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(s > 0, (s - b) / np.sqrt(2.0 * s), -np.inf)
    return q_func(z)


def _outage_slope(s, payload_bits: float):
    s = np.asarray(s, dtype=float)
    b = payload_bits * LN2
    z = (s - b) / np.sqrt(2.0 * s)
    return -_INV_SQRT_2PI * np.exp(-0.5 * z * z) * (s + b) / (2.0 * s) ** 1.5


def asymptotic_objective(split: EnergySplit, payload_bits: float) -> float:
    """Average energy r(E_1..E_M) of a split."""
    e = split.energies
    sums = np.cumsum(e)
    total = e[0]
    for m in range(1, len(e)):
        if sums[m - 1] <= 0.0:
            raise ValueError(f"partial energy before round {m + 1} is zero")
        total += float(outage_of_energy(sums[m - 1], payload_bits)) * e[m]
    return float(total)


def _cost(inner: np.ndarray, e_inf: float, payload_bits: float) -> float:
    s = np.concatenate([inner, [e_inf]])
    g = outage_of_energy(s[:-1], payload_bits)
    return float(s[0] + np.sum(g * np.diff(s)))


def _cost_grad(inner: np.ndarray, e_inf: float, payload_bits: float) -> np.ndarray:
    s = np.concatenate([[0.0], inner, [e_inf]])
    g = outage_of_energy(s[1:-1], payload_bits)
    g_prev = np.concatenate([[1.0], g[:-1]])
    return g_prev - g + _outage_slope(s[1:-1], payload_bits) * (s[2:] - s[1:-1])


def _scan(rounds: int, e_inf: float, payload_bits: float) -> np.ndarray:
    """Cumulative sums minimising r on a uniform grid over (0, E_inf)."""
    grid = e_inf * np.arange(1, _SCAN_POINTS) / _SCAN_POINTS
    g = outage_of_energy(grid, payload_bits)
    best = grid.copy()  # cost of reaching S_1 = grid point
    back = []
    # step from S_{m} = grid[i] to S_{m+1} = grid[j] costs g(grid[i]) (grid[j] - grid[i])
    step = g[:, None] * (grid[None, :] - grid[:, None])
    step[np.tril_indices(grid.size)] = np.inf
    for _ in range(rounds - 2):
        total = best[:, None] + step
        arg = np.argmin(total, axis=0)
        back.append(arg)
        best = total[arg, np.arange(grid.size)]
    final = best + g * (e_inf - grid)
    i = int(np.argmin(final))
    path = [i]
    for arg in reversed(back):
        i = int(arg[i])
        path.append(i)
    return grid[path[::-1]]


def _refine(start: np.ndarray, e_inf: float, payload_bits: float) -> tuple[np.ndarray, float]:
    res = optimize.minimize(
        _cost,
        start,
        args=(e_inf, payload_bits),
        jac=_cost_grad,
        method="L-BFGS-B",
        bounds=[(1e-9 * e_inf, e_inf)] * start.size,
        options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 2000},
    )
    x = np.sort(res.x)
    return x, _cost(x, e_inf, payload_bits)


@lru_cache(maxsize=256)
def _solve_cumulative(rounds: int, payload_bits: float, reliability_target: float) -> tuple[float, ...]:
    e_inf = e_noharq_infinity(payload_bits, reliability_target)
    if rounds == 1:
        return (e_inf,)
    starts = [_scan(rounds, e_inf, payload_bits)]
    # the (M-1)-round optimum with one boundary doubled is feasible here, which
    # keeps the sequence of optima non-increasing in M
    prev = np.asarray(_solve_cumulative(rounds - 1, payload_bits, reliability_target)[:-1])
    if prev.size:
        starts.append(np.sort(np.concatenate([prev, [prev[-1]]])))
        starts.append(np.sort(np.concatenate([prev, [0.5 * (prev[-1] + e_inf)]])))
    else:
        starts.append(np.array([0.5 * e_inf]))
    best_x, best_cost = None, math.inf
    for start in starts:
        for x in (start, _refine(start, e_inf, payload_bits)[0]):
            cost = _cost(x, e_inf, payload_bits)
            if cost < best_cost:
                best_x, best_cost = x, cost
    return tuple(best_x) + (e_inf,)


def solve_e_as(rounds: int, payload_bits: float, reliability_target: float) -> tuple[float, EnergySplit]:
    """Least asymptotic average energy with ``rounds`` rounds, and its split."""
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    sums = _solve_cumulative(int(rounds), float(payload_bits), float(reliability_target))
    split = EnergySplit.from_cumulative(sums)
    if rounds == 1:
        return sums[0], split
    return asymptotic_objective(split, payload_bits), split


def limit_integral(payload_bits: float, reliability_target: float) -> float:
    """Integral of g over [0, E_inf]: the M -> infinity limit of solve_e_as."""
    e_inf = e_noharq_infinity(payload_bits, reliability_target)
    b = payload_bits * LN2
    tol = 1e-9 * e_inf

    def f(s):
        return float(outage_of_energy(s, payload_bits))

    # g drops from 1 to 0 around B ln2; splitting there lets quad adapt on each side
    cut = min(b, e_inf)
    left, _ = integrate.quad(f, 0.0, cut, epsabs=tol, epsrel=1e-12, limit=200)
    right = 0.0
    if e_inf > cut:
        right, _ = integrate.quad(f, cut, e_inf, epsabs=tol, epsrel=1e-12, limit=200)
    return left + right
