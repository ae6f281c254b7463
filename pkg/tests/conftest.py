from __future__ import annotations

import functools

import pytest

from irharq import DelayModel, ProblemSpec, SearchGrid, grid_search, run_dp
from irharq.sweep import sweep_optimal_m

from . import fixtures as fx

# criterion number -> (passed, detail); printed once at the end of the session
CRITERIA: dict[int, tuple[bool, str]] = {}


def record(number: int, passed: bool, detail: str) -> None:
    CRITERIA[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        passed, detail = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


def make_spec(rounds=2, n=fx.N, delay=None, bits=fx.B, target=fx.T_REL) -> ProblemSpec:
    return ProblemSpec(bits, n, target, rounds, delay or DelayModel.none())


# expensive runs shared between the module tests and the acceptance suite


@functools.lru_cache(maxsize=None)
def brute(rounds=2, n=fx.N, theta=0.01, delay=None):
    return grid_search(make_spec(rounds, n, delay), SearchGrid(theta))


@functools.lru_cache(maxsize=None)
def dp(rounds=2, n=fx.N, delay=None, grid=None, polish=None):
    return run_dp(make_spec(rounds, n, delay), grid, polish=polish)


@functools.lru_cache(maxsize=None)
def m_sweep(n: int, delay: DelayModel, m_max: int = 8):
    return sweep_optimal_m(make_spec(1, n, delay), m_max)


@pytest.fixture
def spec2() -> ProblemSpec:
    return make_spec(2)
