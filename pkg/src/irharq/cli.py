"""Command-line entry point: ``irharq {optimize,sweep,asymptotic,surface}``.

Every command reads a JSON run configuration (``--config``) and writes its
document to ``--out`` (or the config's ``output``, or stdout). Exit status is
0 on success, 1 when the configuration cannot be parsed or validated and 2
when the problem itself is infeasible.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

from .asymptotic import limit_integral, solve_e_as
from .bruteforce import (
    MAX_ROUNDS,
    SearchGrid,
    grid_search,
    objective_surface,
    surface_argmin,
    write_surface_csv,
)
from .config import SWEEP_AXES, ConfigError, RunConfig, load_config
from .dp import run_dp
from .fbl import e_noharq_infinity
from .model import DelayModel, HarqError, InfeasibleSpecError, NoSolutionError, OptimizationResult, ProblemSpec
from .solvers import latency_budget, one_shot_optimum
from .sweep import sweep_optimal_m

log = logging.getLogger("irharq")

SCHEMA_VERSION = 1
WORKERS_ENV = "IRHARQ_MAX_WORKERS"
SIG_DIGITS = 12

SWEEP_COLUMNS = ("M", "energy", "gain_vs_M1", "M_star", "status")
ASYMPTOTIC_COLUMNS = ("B_bits", "M", "energy", "gain_vs_M1", "split", "status")


def round_floats(obj):
    """Floats to 12 significant digits (non-finite ones to null), recursively."""
    if isinstance(obj, float):
        if not math.isfinite(obj):
            return None
        return float(f"{obj:.{SIG_DIGITS}g}")
    if isinstance(obj, dict):
        return {k: round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v) for v in obj]
    return obj


def fmt(value) -> str:
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.{SIG_DIGITS}g}"
    if value is None:
        return ""
    return str(value)


def max_workers() -> int:
    raw = os.environ.get(WORKERS_ENV)
    cap = os.cpu_count() or 1
    if raw:
        try:
            cap = max(1, int(raw))
        except ValueError:
            log.warning("ignoring %s=%r", WORKERS_ENV, raw)
    return cap


def _ordered_map(fn, items):
    """map() over a process pool, results in input order."""
    items = list(items)
    workers = min(max_workers(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def check_result(result: OptimizationResult, spec: ProblemSpec) -> dict:
    """Re-validate an emitted plan against both constraints."""
    eps = result.per_round_eps[-1]
    budget = latency_budget(spec)
    if spec.delay_model.kind == "linear":
        lat_ok = budget.interval_low <= result.latency_used <= budget.interval_high
    else:
        lat_ok = sum(result.plan.blocklengths) <= budget.effective_total
    return {
        "outage_ok": bool(eps <= spec.outage_target * (1.0 + 1e-9)),
        "latency_ok": bool(lat_ok),
    }


def optimize(cfg: RunConfig, oracle: bool = False) -> dict:
    spec = cfg.spec
    grids = cfg.grids
    latency_budget(spec)
    if cfg.mode == "bruteforce" or (cfg.mode == "auto" and spec.rounds == 1):
        if spec.rounds > MAX_ROUNDS:
            raise ConfigError(f"brute force is limited to M <= {MAX_ROUNDS}")
        result = one_shot_optimum(spec) if spec.rounds == 1 else grid_search(spec, grids.search_grid())
    else:
        if spec.rounds == 1:
            result = one_shot_optimum(spec)
        else:
            engine = None
            if grids.cache_dir and spec.delay_model.kind != "linear":
                from .dp import TrellisDP

                os.makedirs(grids.cache_dir, exist_ok=True)
                engine = TrellisDP(spec, grids.dp_grid().resolve(spec), cache_dir=grids.cache_dir)
            result = run_dp(spec, grids.dp_grid(), engine=engine, polish=grids.polish)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "command": "optimize",
        "spec": spec.to_dict(),
        "result": result.to_dict(),
        "checks": check_result(result, spec),
    }
    if oracle:
        if spec.rounds > MAX_ROUNDS:
            raise ConfigError(f"--oracle needs M <= {MAX_ROUNDS}")
        ref = one_shot_optimum(spec) if spec.rounds == 1 else grid_search(spec, grids.search_grid())
        doc["oracle"] = {
            "result": ref.to_dict(),
            "energy_gap": (result.energy - ref.energy) / ref.energy,
        }
    return doc


def _spec_at(spec: ProblemSpec, axis: str, value) -> ProblemSpec:
    if axis == "N":
        return dataclasses.replace(spec, latency_budget=int(value), rounds=1)
    if axis == "B":
        return dataclasses.replace(spec, payload_bits=int(value), rounds=1)
    if axis == "d":
        return dataclasses.replace(spec, delay_model=DelayModel.constant(value), rounds=1)
    if axis == "r":
        return dataclasses.replace(spec, delay_model=DelayModel.linear(value), rounds=1)
    return dataclasses.replace(spec, rounds=1)


def _sweep_group(job) -> list[tuple]:
    spec, axis, value, ms, grids = job
    try:
        base = _spec_at(spec, axis, value)
    except (ValueError, HarqError) as exc:
        log.info("%s=%s skipped: %s", axis, value, exc)
        return [(value, m, math.nan, math.nan, None, "invalid") for m in ms]
    sweep = sweep_optimal_m(base, max(ms), grids.dp_grid(), grids.polish)
    energies = sweep.energies()
    status = {row.rounds: row.status for row in sweep.rows}
    e1 = energies.get(1, math.nan)
    ok = [m for m in ms if status.get(m) == "ok"]
    m_star = None
    for m in ok:
        if m_star is None or energies[m] < energies[m_star]:
            m_star = m
    rows = []
    for m in ms:
        e = energies.get(m, math.nan)
        gain = 1.0 - e / e1 if status.get(m) == "ok" and status.get(1) == "ok" else math.nan
        rows.append((value, m, e, gain, m_star, status.get(m, "infeasible")))
    return rows


def sweep(cfg: RunConfig) -> tuple[list[str], list[tuple]]:
    axes = list(cfg.sweep)
    if len(axes) != 1:
        raise ConfigError(f"sweep needs exactly one axis out of {', '.join(SWEEP_AXES)}")
    axis = axes[0]
    values = cfg.sweep[axis]
    if axis == "M":
        ms = [int(v) for v in values]
        if any(m < 1 for m in ms):
            raise ConfigError("'sweep.M' values must be >= 1")
        jobs = [(cfg.spec, axis, None, ms, cfg.grids)]
        rows = [r[1:] for r in _sweep_group(jobs[0])]
        return list(SWEEP_COLUMNS), rows
    ms = list(range(1, cfg.spec.rounds + 1))
    jobs = [(cfg.spec, axis, v, ms, cfg.grids) for v in values]
    rows = [row for group in _ordered_map(_sweep_group, jobs) for row in group]
    return [axis] + list(SWEEP_COLUMNS), rows


def _asymptotic_group(job) -> list[tuple]:
    bits, t_rel, ms = job
    e_inf = e_noharq_infinity(bits, t_rel)
    rows = []
    for m in ms:
        energy, split = solve_e_as(m, bits, t_rel)
        rows.append((bits, m, energy, 1.0 - energy / e_inf, ";".join(fmt(e) for e in split.energies), "ok"))
    lim = limit_integral(bits, t_rel)
    rows.append((bits, "limit", lim, 1.0 - lim / e_inf, "", "ok"))
    return rows


def asymptotic(cfg: RunConfig) -> tuple[list[str], list[tuple]]:
    spec = cfg.spec
    bits = [int(b) for b in cfg.asymptotic.get("B", [spec.payload_bits])]
    ms = [int(m) for m in cfg.asymptotic.get("M", list(range(1, spec.rounds + 1)))]
    if any(m < 1 for m in ms) or any(b < 1 for b in bits):
        raise ConfigError("asymptotic M and B values must be positive")
    jobs = [(b, spec.reliability_target, ms) for b in bits]
    rows = [row for group in _ordered_map(_asymptotic_group, jobs) for row in group]
    return list(ASYMPTOTIC_COLUMNS), rows


def _surface_axis(raw, default, name, cast):
    if raw is None:
        return default
    from .config import _axis

    return [cast(v) for v in _axis(raw, f"surface.{name}")]


def surface(cfg: RunConfig):
    spec = cfg.spec
    if spec.rounds != 2:
        raise ConfigError("surface needs M = 2")
    total = latency_budget(spec).effective_total
    n1 = _surface_axis(cfg.surface.get("n1"), list(range(spec.min_blocklength, total)), "n1", int)
    # the full brute-force ladder up to 1e3 would give millions of cells
    ladder = SearchGrid(cfg.grids.theta_P, min(cfg.grids.power_max, 10.0)).powers()
    p1 = _surface_axis(cfg.surface.get("P1"), list(ladder), "P1", float)
    cells = objective_surface(spec, n1, p1, cfg.grids.power_max)
    return cells, surface_argmin(cells)


def _open_out(path):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", newline=""), True


def _write_csv(header, rows, path) -> None:
    fh, close = _open_out(path)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    finally:
        if close:
            fh.close()


def _write_json(doc, path) -> None:
    text = json.dumps(round_floats(doc), indent=2) + "\n"
    fh, close = _open_out(path)
    try:
        fh.write(text)
    finally:
        if close:
            fh.close()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="irharq", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("optimize", "energy-minimal plan for one spec (JSON)"),
        ("sweep", "energy over one axis of N, M, B, d or r (CSV)"),
        ("asymptotic", "N -> infinity energies over M and B (CSV)"),
        ("surface", "M=2 objective over (n1, P1) (CSV)"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", help="output file (default: config 'output' or stdout)")
        if name == "optimize":
            p.add_argument("--oracle", action="store_true", help="also run brute force (M <= 3)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        out = args.out or cfg.output
        if args.command == "optimize":
            start = time.perf_counter()
            doc = optimize(cfg, args.oracle)
            doc["wall_time_s"] = time.perf_counter() - start
            _write_json(doc, out)
        elif args.command == "sweep":
            _write_csv(*sweep(cfg), out)
        elif args.command == "asymptotic":
            _write_csv(*asymptotic(cfg), out)
        else:
            cells, best = surface(cfg)
            buf = io.StringIO()
            write_surface_csv(cells, buf)
            csv.writer(buf, lineterminator="\n").writerow(
                [fmt(v) for v in dataclasses.replace(best, status="argmin").row()]
            )
            fh, close = _open_out(out)
            try:
                fh.write(buf.getvalue())
            finally:
                if close:
                    fh.close()
    except (InfeasibleSpecError, NoSolutionError) as exc:
        print(f"irharq: infeasible: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"irharq: config error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
