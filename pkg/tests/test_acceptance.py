"""Acceptance suite: one test per criterion.

Every test records a one-line PASS/FAIL verdict that is printed in the
"acceptance criteria" section at the end of the pytest run.
"""

import math
import time

import mpmath as mp
import numpy as np
import pytest

from irharq import (
    DelayModel,
    DPGrid,
    e_noharq_infinity,
    limit_integral,
    one_shot_optimum,
    q_func,
    q_inv,
    run_dp,
    solve_e_as,
    state_backward,
    state_forward,
    state_init,
)
from irharq.asymptotic import _solve_cumulative
from irharq.fbl import normal_approx_argument, region_b_floor

from . import fixtures as fx
from .conftest import brute, dp, m_sweep, make_spec, record

SLACK = 0.005


def non_increasing(values, slack=0.0):
    return all(b <= a * (1 + slack) for a, b in zip(values, values[1:]))


def test_criterion_01_oracle_equivalence():
    t0 = time.perf_counter()
    ref = brute()
    t_bf = time.perf_counter() - t0
    t0 = time.perf_counter()
    res = run_dp(make_spec(2))
    t_dp = time.perf_counter() - t0
    gap = (res.energy - ref.energy) / ref.energy

    # joint 2x refinement of theta_V and theta_c, unit blocklength steps
    c_final = q_inv(1 - fx.T_REL)
    divisors = [16, 32, 64, 128, 256, 512]
    gaps = []
    for d in divisors:
        e = run_dp(make_spec(2), DPGrid(fx.N / d, c_final / d, 1)).energy
        gaps.append(abs(e - ref.energy) / ref.energy)
    shrinks = non_increasing(gaps) and gaps[-1] < gaps[0]

    ok = abs(gap) <= 0.01 and t_bf < 300 and t_dp < 300 and shrinks
    record(
        1,
        ok,
        f"DP {res.energy:.6f} vs brute force {ref.energy:.6f} (gap {gap:+.2e}); "
        f"times {t_dp:.1f}s / {t_bf:.1f}s; |gap| under 2x refinement "
        + " ".join(f"{g:.1e}" for g in gaps),
    )
    assert abs(gap) <= 0.01
    assert t_bf < 300 and t_dp < 300
    assert shrinks


def test_criterion_02_more_rounds_never_cost_more():
    e = [one_shot_optimum(make_spec(1)).energy, dp(2).energy, dp(3).energy]
    ok = non_increasing(e, SLACK)
    record(2, ok, "E*(1..3) = " + ", ".join(f"{x:.4f}" for x in e))
    assert ok


def test_criterion_03_energy_non_increasing_in_latency():
    budgets = [200, 300, 400, 600]
    series = {
        1: [one_shot_optimum(make_spec(1, n=n)).energy for n in budgets],
        2: [dp(2, n=n).energy for n in budgets],
    }
    ok = all(non_increasing(v, SLACK) for v in series.values())
    record(
        3,
        ok,
        "; ".join(f"M={m}: " + ", ".join(f"{x:.3f}" for x in v) for m, v in series.items()),
    )
    assert ok


def test_criterion_04_one_shot_approaches_asymptote():
    t0 = time.perf_counter()
    e = one_shot_optimum(make_spec(1, n=100_000)).energy
    elapsed = time.perf_counter() - t0
    e_inf = e_noharq_infinity(fx.B, fx.T_REL)
    rel = abs(e - e_inf) / e_inf
    ok = rel <= 0.01 and elapsed < 1.0
    record(4, ok, f"E(N=1e5) {e:.4f} vs E_inf {e_inf:.4f} (rel {rel:.2e}), {elapsed * 1e3:.1f} ms")
    assert rel <= 0.01 and elapsed < 1.0


def bisection_e_inf(bits, target):
    """Root of Q((E - B ln2)/sqrt(2E)) = 1 - T_rel by plain bisection in mpmath."""
    mp.mp.dps = 40
    b = bits * mp.log(2)
    eps = 1 - mp.mpf(target)

    def f(e):
        return mp.erfc((e - b) / mp.sqrt(2 * e) / mp.sqrt(2)) / 2 - eps

    lo, hi = b / 4, 4 * b + 200
    for _ in range(200):
        mid = (lo + hi) / 2
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return float((lo + hi) / 2)


def test_criterion_05_closed_form_matches_root():
    combos = [(b, t) for b in (64, 256, 1024) for t in ("0.5", "0.999", "0.99999")]
    worst = 0.0
    for bits, t in combos:
        e = e_noharq_infinity(bits, float(t))
        worst = max(worst, abs(e - bisection_e_inf(bits, t)) / e)
    exact_half = all(e_noharq_infinity(b, 0.5) == pytest.approx(b * math.log(2), rel=1e-15) for b in (64, 256, 1024))
    ok = worst <= 1e-9 and exact_half
    record(5, ok, f"{len(combos)} (B, T_rel) combinations, worst relative error {worst:.1e}")
    assert ok


def test_criterion_06_limit_integral_bounds_the_sequence():
    t0 = time.perf_counter()
    limit = limit_integral(fx.B, fx.T_REL)
    t_quad = time.perf_counter() - t0
    _solve_cumulative.cache_clear()
    values, times = [], []
    for m in range(1, 9):
        t0 = time.perf_counter()
        values.append(solve_e_as(m, fx.B, fx.T_REL)[0])
        times.append(time.perf_counter() - t0)
    gaps = [v - limit for v in values]
    ok = (
        min(gaps) >= 0
        and non_increasing(values)
        and all(b < a for a, b in zip(gaps, gaps[1:]))
        and t_quad < 10
        and max(times) < 10
    )
    record(
        6,
        ok,
        f"limit {limit:.4f}; E_as(1..8) " + ", ".join(f"{v:.3f}" for v in values)
        + f"; slowest point {max(max(times), t_quad):.2f}s",
    )
    assert ok


def test_criterion_07_asymptotic_gain():
    e8 = solve_e_as(8, fx.B, fx.T_REL)[0]
    gain = 1 - e8 / e_noharq_infinity(fx.B, fx.T_REL)
    ok = 0.15 <= gain <= 0.40
    record(7, ok, f"gain 1 - E_as(8)/E_inf = {gain:.5f} (fixture {fx.GAIN_M8:.5f})")
    assert gain == pytest.approx(fx.GAIN_M8, rel=1e-6)
    assert ok


def test_criterion_08_delay_and_optimal_rounds():
    budgets = [300, 400, 600]
    d = 10
    m_const = [m_sweep(n, DelayModel.constant(d)).m_star for n in budgets]
    # same average delay: a linear model charges r x (symbols so far), which
    # averages to r N / 2 per round
    m_lin = [m_sweep(n, DelayModel.linear(2 * d / n)).m_star for n in budgets]
    interior = m_const[1] < 8
    ordered = all(b >= a for a, b in zip(m_const, m_const[1:]))
    linear_le = all(lin <= const for lin, const in zip(m_lin, m_const))
    ok = interior and ordered and linear_le
    record(8, ok, f"M* constant(d=10) at N=300/400/600: {m_const}; linear(r=2d/N): {m_lin}")
    assert ok


def test_criterion_09_algebra_round_trips():
    rng = np.random.default_rng(2024)

    # forward then backward, 1000 transitions
    worst_bw = 0.0
    for _ in range(1000):
        bits = int(rng.integers(8, 2049))
        prev = state_init(int(rng.integers(1, 1001)), float(np.exp(rng.uniform(np.log(1e-3), np.log(10)))), bits)
        n = int(rng.integers(1, 1001))
        nxt = state_forward(prev, n, float(np.exp(rng.uniform(np.log(1e-3), np.log(10)))))
        c = state_backward(nxt, prev.cum_blocklength, prev.cum_dispersion)
        worst_bw = max(worst_bw, abs(c - prev.margin) / max(1.0, abs(prev.margin)))

    # q_inv then q_func
    p = np.logspace(-30, np.log10(1 - 1e-10), 2000)
    worst_q = float(np.max(np.abs(q_func(q_inv(p)) - p) / p))

    # zero power
    s = state_init(150, 0.9, 256)
    z = state_forward(s, 80, 0.0)
    zero_ok = z.cum_dispersion == s.cum_dispersion and z.margin == s.margin

    # the final outage falls with the final power wherever eps_{M-1} > eps_M
    lemma2 = 0
    while lemma2 < 100:
        m = int(rng.integers(2, 5))
        n = rng.integers(10, 300, m)
        pw = np.exp(rng.uniform(np.log(0.01), np.log(5), m))
        eps = [q_func(normal_approx_argument(n[:k], pw[:k], 256)) for k in (m - 1, m)]
        # near eps = 1 the tail rounds to exactly 1 and no slope is visible
        if not (eps[0] > eps[1] and 0 < eps[1] < 1 - 1e-9):
            continue
        h = 1e-6 * pw[-1]
        up, down = pw.copy(), pw.copy()
        up[-1] += h
        down[-1] -= h
        slope = (q_func(normal_approx_argument(n, up, 256)) - q_func(normal_approx_argument(n, down, 256))) / (2 * h)
        assert slope < 0, (n, pw)
        lemma2 += 1

    # scaling the first round by a (n_1 -> a n_1, P_1 -> P_1 / a) inside region B
    a_grid = np.linspace(1.0, 3.0, 41)
    floor = region_b_floor(256)
    lemma3 = 0
    while lemma3 < 100:
        m = int(rng.integers(2, 5))
        n = rng.uniform(20, 300, m)
        pw = np.exp(rng.uniform(np.log(0.05), np.log(5), m))
        eps1 = q_func(normal_approx_argument(n[:1], pw[:1], 256))
        eps_m = q_func(normal_approx_argument(n, pw, 256))
        if not 0.5 > eps1 > eps_m > floor:
            continue
        f1, fm = [], []
        for a in a_grid:
            ns, ps = n.copy(), pw.copy()
            ns[0] *= a
            ps[0] /= a
            f1.append(q_func(normal_approx_argument(ns[:1], ps[:1], 256)))
            fm.append(q_func(normal_approx_argument(ns, ps, 256)))
        assert non_increasing(f1) and non_increasing(fm), (n, pw)
        lemma3 += 1

    ok = worst_bw <= 1e-10 and worst_q <= 1e-10 and zero_ok
    record(
        9,
        ok,
        f"back-step {worst_bw:.1e}, q round trip {worst_q:.1e}, zero power ok={zero_ok}, "
        f"Lemma 2 at {lemma2} points, Lemma 3 at {lemma3} points",
    )
    assert ok


def test_criterion_10_margins_increase_on_optimal_plans():
    checked, worst = 0, math.inf
    plans = [(brute(), 0.0), (brute(theta=0.02), 0.0)]
    for rounds in (2, 3):
        res = dp(rounds)
        plans.append((res, res.grid_meta["theta_c"]))
    for n in (200, 300, 600):
        res = dp(2, n=n)
        plans.append((res, res.grid_meta["theta_c"]))
    ok = True
    for res, tol in plans:
        c = res.margins
        steps = np.diff(c)
        worst = min(worst, float(steps.min()))
        ok &= c[0] >= -tol and bool(np.all(steps > -tol))
        checked += 1
    record(10, ok, f"{checked} plans, smallest c_(m+1) - c_m = {worst:.3f}")
    assert ok
