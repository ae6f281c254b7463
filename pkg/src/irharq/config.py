"""Run configuration files (JSON) for the command-line interface."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .bruteforce import SearchGrid
from .dp import DPGrid
from .model import DelayModel, ProblemSpec


class ConfigError(ValueError):
    """The configuration file cannot be read or does not validate."""


SPEC_KEYS = {"B_bits", "N", "T_rel", "M", "delay", "n_min"}
GRID_KEYS = {"theta_V", "theta_c", "n_step", "theta_P", "power_max", "n_min", "polish", "cache_dir"}
SWEEP_AXES = ("N", "M", "B", "d", "r")
ASYMPTOTIC_KEYS = {"M", "B"}
SURFACE_KEYS = {"n1", "P1"}
TOP_KEYS = {"spec", "grids", "sweep", "asymptotic", "surface", "mode", "output"}
MODES = ("auto", "dp", "bruteforce")


def _reject_unknown(section: str, data: dict, allowed: set) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"'{section}' must be an object")
    extra = sorted(set(data) - allowed)
    if extra:
        raise ConfigError(f"unknown field(s) in '{section}': {', '.join(extra)}")


def _int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise ConfigError(f"'{name}' must be an integer")
    return int(value)


def _num(value, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"'{name}' must be a number")
    return float(value)


def _opt_num(value, name: str):
    return None if value is None else _num(value, name)


def _delay(data) -> DelayModel:
    if data is None:
        return DelayModel.none()
    if isinstance(data, str):
        data = {"type": data}
    _reject_unknown("spec.delay", data, {"type", "value"})
    kind = data.get("type", "none")
    try:
        return DelayModel(kind, _num(data.get("value", 0.0), "spec.delay.value"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class GridConfig:
    theta_V: float | None = None
    theta_c: float | None = None
    n_step: int | None = None
    theta_P: float = 0.01
    power_max: float = 1e3
    polish: bool | None = None
    cache_dir: str | None = None

    def dp_grid(self) -> DPGrid:
        return DPGrid(self.theta_V, self.theta_c, self.n_step)

    def search_grid(self) -> SearchGrid:
        return SearchGrid(self.theta_P, self.power_max)


@dataclass(frozen=True)
class RunConfig:
    spec: ProblemSpec
    grids: GridConfig = field(default_factory=GridConfig)
    sweep: dict[str, list] = field(default_factory=dict)
    asymptotic: dict[str, list] = field(default_factory=dict)
    surface: dict[str, Any] = field(default_factory=dict)
    mode: str = "auto"
    output: str | None = None

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        _reject_unknown("config", data, TOP_KEYS)
        if "spec" not in data:
            raise ConfigError("missing 'spec' section")
        raw = data["spec"]
        _reject_unknown("spec", raw, SPEC_KEYS)
        grids_raw = data.get("grids", {}) or {}
        _reject_unknown("grids", grids_raw, GRID_KEYS)
        for key in ("B_bits", "N", "T_rel", "M"):
            if key not in raw:
                raise ConfigError(f"missing 'spec.{key}'")
        n_min = raw.get("n_min", grids_raw.get("n_min", 1))
        if "n_min" in raw and "n_min" in grids_raw and raw["n_min"] != grids_raw["n_min"]:
            raise ConfigError("'spec.n_min' and 'grids.n_min' disagree")
        try:
            spec = ProblemSpec(
                payload_bits=_int(raw["B_bits"], "spec.B_bits"),
                latency_budget=_int(raw["N"], "spec.N"),
                reliability_target=_num(raw["T_rel"], "spec.T_rel"),
                rounds=_int(raw["M"], "spec.M"),
                delay_model=_delay(raw.get("delay")),
                min_blocklength=_int(n_min, "n_min"),
            )
        except ConfigError:
            raise
        except ValueError as exc:
            # infeasible budgets keep their own type so the CLI can map them to exit 2
            if type(exc) is not ValueError:
                raise
            raise ConfigError(str(exc)) from exc

        polish = grids_raw.get("polish")
        if polish is not None and not isinstance(polish, bool):
            raise ConfigError("'grids.polish' must be true, false or null")
        try:
            grids = GridConfig(
                theta_V=_opt_num(grids_raw.get("theta_V"), "grids.theta_V"),
                theta_c=_opt_num(grids_raw.get("theta_c"), "grids.theta_c"),
                n_step=None if grids_raw.get("n_step") is None else _int(grids_raw["n_step"], "grids.n_step"),
                theta_P=_num(grids_raw.get("theta_P", 0.01), "grids.theta_P"),
                power_max=_num(grids_raw.get("power_max", 1e3), "grids.power_max"),
                polish=polish,
                cache_dir=grids_raw.get("cache_dir"),
            )
            grids.search_grid()
            for name in ("theta_V", "theta_c"):
                v = getattr(grids, name)
                if v is not None and not v > 0:
                    raise ConfigError(f"'grids.{name}' must be positive")
            if grids.n_step is not None and grids.n_step < 1:
                raise ConfigError("'grids.n_step' must be >= 1")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

        sweep = data.get("sweep", {}) or {}
        _reject_unknown("sweep", sweep, set(SWEEP_AXES))
        sweep = {k: _axis(v, f"sweep.{k}") for k, v in sweep.items()}
        asym = data.get("asymptotic", {}) or {}
        _reject_unknown("asymptotic", asym, ASYMPTOTIC_KEYS)
        asym = {k: _axis(v, f"asymptotic.{k}") for k, v in asym.items()}
        surface = data.get("surface", {}) or {}
        _reject_unknown("surface", surface, SURFACE_KEYS)
        mode = data.get("mode", "auto")
        if mode not in MODES:
            raise ConfigError(f"'mode' must be one of {', '.join(MODES)}")
        output = data.get("output")
        if output is not None and not isinstance(output, str):
            raise ConfigError("'output' must be a path string")
        return cls(spec, grids, sweep, asym, surface, mode, output)


def _axis(values, name: str) -> list:
    if isinstance(values, dict):
        _reject_unknown(name, values, {"start", "stop", "step"})
        try:
            start, stop = values["start"], values["stop"]
        except KeyError as exc:
            raise ConfigError(f"'{name}' range needs start and stop") from exc
        step = values.get("step", 1)
        if not step > 0:
            raise ConfigError(f"'{name}.step' must be positive")
        out, k = [], 0
        while start + k * step <= stop + 1e-12 * abs(step):
            out.append(start + k * step)
            k += 1
        values = out
    if not isinstance(values, list) or not values:
        raise ConfigError(f"'{name}' must be a non-empty list or a range object")
    for v in values:
        _num(v, name)
    return values


def load_config(path) -> RunConfig:
    """Parse and validate a JSON run configuration.

    JSON syntax errors are reported as ``path:line:column: message``.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}:1:1: top level must be an object")
    return RunConfig.from_dict(data)
