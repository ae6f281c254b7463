import math

import numpy as np
import pytest
from scipy import optimize

from irharq import (
    DelayModel,
    DPGrid,
    HarqState,
    ProblemSpec,
    SearchGrid,
    TrellisDP,
    dp_layer_step,
    grid_search,
    implied_power,
    init_layer2,
    one_shot_optimum,
    q_func,
    q_inv,
    run_dp,
    state_backward,
)
from irharq.cache import CacheMismatchError, cache_path, dump_layer, load_layer
from irharq.dp import package_result
from irharq.model import InfeasibleSpecError
from irharq.sweep import sweep_optimal_m

from . import fixtures as fx
from .conftest import brute, dp, make_spec


def small_grid(spec, theta_v=None, theta_c=None, n_step=4):
    return DPGrid(theta_v or spec.latency_budget / 32, theta_c or q_inv(spec.outage_target) / 16, n_step).resolve(spec)


# -- grid defaults ----------------------------------------------------------


def test_default_grids():
    g2 = DPGrid().resolve(make_spec(2))
    assert g2.theta_V == 400 / 512 and g2.n_step == 1
    assert g2.c_step == pytest.approx(fx.Q_INV_1E5 / 256, rel=1e-12)
    g4 = DPGrid().resolve(make_spec(4))
    assert g4.theta_V == 400 / 32 and g4.n_step == 8
    assert g4.c_axis[-1] == q_inv(1 - fx.T_REL)


def test_c_axis_ends_on_final_margin():
    g = DPGrid(1.0, 0.3, 1).resolve(make_spec(2))
    assert g.c_axis[0] == 0.0 and g.c_axis[-1] == g.c_final
    assert g.c_step <= 0.3


# -- round-2 table ----------------------------------------------------------


def scan_layer2(n2_total, v2, c2, payload_bits, c_max, n_min=1):
    """Independent optimum of the round-2 table entry: scan N_1, find every
    first-round power consistent with (V_2, c_2) by sign changes on a dense
    power grid, and keep the cheapest admissible split."""
    b = payload_bits * math.log(2)
    target = c2 * math.sqrt(v2)
    best = math.inf
    for n1 in range(n_min, n2_total - n_min + 1):
        n2 = n2_total - n1

        def resid(p1):
            rest = (v2 - n1 * (1 - 1 / (1 + p1) ** 2)) / n2
            if not 0 <= rest < 1:
                return math.nan
            p2 = 1 / math.sqrt(1 - rest) - 1
            return n1 * math.log1p(p1) + n2 * math.log1p(p2) - b - target

        grid = np.exp(np.linspace(-9, 6, 3000))
        if v2 < n1:
            # past this power the first round alone exceeds V_2; the root next
            # to it (second power near zero) needs the edge itself on the grid
            edge = 1 / math.sqrt(1 - v2 / n1) - 1
            grid = np.append(grid[grid < edge], edge)
        vals = np.array([resid(p) for p in grid])
        for i in np.flatnonzero(np.isfinite(vals[:-1]) & np.isfinite(vals[1:]) & (np.sign(vals[:-1]) != np.sign(vals[1:]))):
            p1 = optimize.brentq(resid, grid[i], grid[i + 1], xtol=1e-15, rtol=1e-15)
            v1 = n1 * (1 - 1 / (1 + p1) ** 2)
            c1 = (n1 * math.log1p(p1) - b) / math.sqrt(v1)
            if not -1e-9 <= c1 <= c_max + 1e-9:
                continue
            p2 = implied_power(v2 - v1, n2)
            best = min(best, n1 * p1 + n2 * p2 * q_func(c1))
    return best


@pytest.mark.parametrize(
    "n2_total, v2, k",
    [(400, 276.5625, -1), (300, 187.5, -1), (250, 150.0, 8)],
)
def test_init_layer2_matches_scan(n2_total, v2, k):
    spec = make_spec(2)
    grid = DPGrid(400 / 512, None, 1).resolve(spec)
    c2 = grid.c_axis[k]
    layer = init_layer2(spec, grid, [n2_total], [v2], [c2])
    expected = scan_layer2(n2_total, v2, c2, fx.B, grid.c_final)
    assert layer.energy[0, 0, 0] == pytest.approx(expected, rel=1e-9)


def test_init_layer2_absent_states():
    spec = make_spec(2)
    grid = DPGrid(400 / 32, None, 4).resolve(spec)
    c = grid.c_axis
    # V above the margin bound
    v_hi = float(grid.v_bound(c[0])) + 20
    layer = init_layer2(spec, grid, [400], [v_hi], [c[0]])
    assert len(layer) == 0
    # fewer than 2 n_min symbols
    spec3 = ProblemSpec(fx.B, 400, fx.T_REL, 2, min_blocklength=5)
    g3 = DPGrid(1.0, None, 1).resolve(spec3)
    layer = init_layer2(spec3, g3, [8, 9, 12], [6.0], g3.c_axis[:3])
    present = layer.present.any(axis=(1, 2))
    assert present.tolist() == [False, False, True]


def test_layer_states_respect_bounds():
    spec = make_spec(3)
    grid = small_grid(spec)
    layer = init_layer2(spec, grid)
    assert len(layer) > 0
    for (n, v, c), e in layer.states():
        assert v < n and v <= grid.v_bound(c) + 1e-9
        assert 0 <= c <= grid.c_final and e > 0


# -- Bellman step -----------------------------------------------------------


def test_layer_step_matches_predecessor_enumeration():
    spec = make_spec(3, n=160)
    grid = small_grid(spec)
    prev = init_layer2(spec, grid)
    c_step = grid.c_step
    n_t, v_t, c_t = 160, 20 * grid.theta_V, grid.c_final
    layer = dp_layer_step(prev, grid, 3, [n_t], [v_t], [c_t])
    nxt = HarqState(n_t, v_t, c_t)
    best = math.inf
    for (n_p, v_p, _), _ in prev.states():
        n_r = n_t - n_p
        if n_r < grid.n_min or not 0 <= v_t - v_p < n_r:
            continue
        c_p = state_backward(nxt, n_p, v_p)
        if not -1e-12 <= c_p <= grid.c_final + 1e-12:
            continue
        k = min(int(round(c_p / c_step)), prev.c_values.size - 1)
        i, j = int(np.flatnonzero(prev.n_values == n_p)[0]), int(np.flatnonzero(prev.v_values == v_p)[0])
        e_prev = prev.energy[i, j, k]
        if not np.isfinite(e_prev):
            continue
        best = min(best, e_prev + n_r * implied_power(v_t - v_p, n_r) * q_func(c_p))
    assert math.isfinite(best)
    assert layer.energy[0, 0, 0] == pytest.approx(best, rel=1e-12)


def test_layer_step_needs_round_three():
    spec = make_spec(3)
    grid = small_grid(spec)
    with pytest.raises(ValueError):
        dp_layer_step(init_layer2(spec, grid), grid, 2)


# -- full optimizer ---------------------------------------------------------


def test_m1_is_one_shot_bit_for_bit():
    spec = make_spec(1)
    a, b = run_dp(spec), one_shot_optimum(spec)
    assert a.plan == b.plan and a.energy == b.energy


def test_m2_against_brute_force():
    res, ref = dp(), brute()
    assert abs(res.energy - ref.energy) / ref.energy < 0.01
    assert sum(res.plan.blocklengths) == 400
    assert res.per_round_eps[-1] == pytest.approx(1 - fx.T_REL, rel=1e-9)


def test_three_rounds_beat_two():
    assert dp(3).energy <= dp(2).energy * 1.005


def test_margins_increase_along_plan():
    for res in (dp(2), dp(3)):
        c = res.margins
        theta_c = res.grid_meta["theta_c"]
        assert c[0] >= -1e-9
        assert all(b > a - theta_c for a, b in zip(c, c[1:]))


def test_polish_never_worse():
    spec = make_spec(3)
    engine = TrellisDP(spec, DPGrid().resolve(spec))
    plan, _ = engine.solve(3, 400)
    meta = engine.grid.meta()
    raw = package_result(spec, plan, "dp", meta, polish=False)
    polished = package_result(spec, plan, "dp", meta, polish=True)
    assert polished.energy <= raw.energy
    assert sum(polished.plan.blocklengths) == 400
    assert polished.per_round_eps[-1] == pytest.approx(1 - fx.T_REL, rel=1e-9)


def test_deterministic():
    spec = make_spec(3, n=200)
    a, b = run_dp(spec), run_dp(spec)
    assert a.plan == b.plan and a.energy == b.energy


def test_constant_delay_uses_reduced_budget():
    res = run_dp(make_spec(2, delay=DelayModel.constant(5)))
    ref = run_dp(make_spec(2, n=390))
    assert res.plan == ref.plan and res.energy == ref.energy
    assert res.latency_used == 400


def test_infeasible_budget():
    with pytest.raises(InfeasibleSpecError):
        run_dp(make_spec(4, n=100, delay=DelayModel.constant(30)))


# -- layer cache ------------------------------------------------------------


def test_cache_round_trip(tmp_path):
    spec = make_spec(3, n=200)
    grid = small_grid(spec)
    fresh = TrellisDP(spec, grid, cache_dir=str(tmp_path)).solve(3, 200)
    assert sorted(p.name for p in tmp_path.iterdir()) == [
        cache_path(tmp_path, spec, grid, 2).name
    ]
    again = TrellisDP(spec, grid, cache_dir=str(tmp_path)).solve(3, 200)
    assert fresh == again

    layer = TrellisDP(spec, grid).layer(2)
    loaded = load_layer(cache_path(tmp_path, spec, grid, 2), spec, grid)
    np.testing.assert_array_equal(loaded.energy, layer.energy)
    np.testing.assert_array_equal(loaded.first_blocklength, layer.first_blocklength)


def test_cache_mismatch(tmp_path):
    spec = make_spec(3, n=200)
    grid = small_grid(spec)
    layer = TrellisDP(spec, grid).layer(2)
    path = tmp_path / "layer.bin"
    dump_layer(layer, path, spec, grid)
    other = ProblemSpec(fx.B, 200, 0.9999, 3)
    with pytest.raises(CacheMismatchError):
        load_layer(path, other, grid)
    with pytest.raises(CacheMismatchError):
        load_layer(path, spec, small_grid(spec, n_step=5))
    data = bytearray(path.read_bytes())
    data[:8] = b"NOTCACHE"
    path.write_bytes(bytes(data))
    with pytest.raises(CacheMismatchError):
        load_layer(path, spec, grid)
    path.write_bytes(b"short")
    with pytest.raises(CacheMismatchError):
        load_layer(path, spec, grid)


# -- linear delay -----------------------------------------------------------


def test_linear_zero_rate_is_no_delay():
    a = run_dp(make_spec(2, delay=DelayModel.linear(0.0)))
    b = run_dp(make_spec(2))
    assert a.plan == b.plan and a.energy == b.energy


@pytest.mark.parametrize("rounds", [2, 3])
def test_linear_costs_at_least_no_delay(rounds):
    lin = dp(rounds, delay=DelayModel.linear(0.05))
    assert lin.energy >= dp(rounds).energy
    assert 400 - rounds * 1 <= lin.latency_used <= 400


def test_linear_m2_against_brute_force():
    spec = make_spec(2, n=200, delay=DelayModel.linear(0.05))
    res = run_dp(spec)
    ref = grid_search(spec, SearchGrid(0.01))
    assert abs(res.energy - ref.energy) / ref.energy < 0.01
    assert res.latency_used <= 200


# -- M sweeps ---------------------------------------------------------------


def test_sweep_no_delay_prefers_most_rounds():
    sweep = sweep_optimal_m(make_spec(1), 4)
    energies = [sweep.energies()[m] for m in range(1, 5)]
    assert all(b <= a * 1.005 for a, b in zip(energies, energies[1:]))
    assert sweep.m_star == 4


def test_sweep_large_delay_prefers_one_shot():
    sweep = sweep_optimal_m(make_spec(1, delay=DelayModel.constant(150)), 3)
    assert sweep.m_star == 1
    assert [r.status for r in sweep.rows] == ["ok", "ok", "infeasible"]
