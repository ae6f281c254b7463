"""Problem description and result containers shared by all optimizers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

LN2 = math.log(2.0)


class HarqError(Exception):
    """Base class for errors raised by this package."""


class InfeasibleSpecError(HarqError, ValueError):
    """The latency budget cannot host M rounds of n_min symbols, or no plan exists."""


class NoSolutionError(HarqError, ValueError):
    """A round cannot bring the outage probability down to the requested target."""


class InfeasibleTransitionError(HarqError, ValueError):
    """A dispersion increment that would need infinite (or negative) power."""


class DegenerateStateError(HarqError, ValueError):
    """A state whose margin is undefined (zero power, zero dispersion)."""


@dataclass(frozen=True)
class DelayModel:
    """Feedback delay charged after each round.

    ``kind`` is ``"none"``, ``"constant"`` (``value`` channel uses per round) or
    ``"linear"`` (``value`` channel uses per symbol received so far).
    """

    kind: str = "none"
    value: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("none", "constant", "linear"):
            raise ValueError(f"unknown delay model {self.kind!r}")
        if not math.isfinite(self.value) or self.value < 0:
            raise ValueError("delay parameter must be a finite non-negative number")
        if self.kind == "none" and self.value != 0:
            raise ValueError("delay model 'none' takes no parameter")

    @classmethod
    def none(cls) -> DelayModel:
        return cls("none", 0.0)

    @classmethod
    def constant(cls, d: float) -> DelayModel:
        return cls("constant", float(d))

    @classmethod
    def linear(cls, r: float) -> DelayModel:
        return cls("linear", float(r))

    def to_dict(self) -> dict[str, Any]:
        return {"type": self.kind, "value": self.value}


@dataclass(frozen=True)
class ProblemSpec:
    payload_bits: int
    latency_budget: int
    reliability_target: float
    rounds: int
    delay_model: DelayModel = field(default_factory=DelayModel.none)
    min_blocklength: int = 1

    def __post_init__(self) -> None:
        if int(self.payload_bits) != self.payload_bits or self.payload_bits <= 0:
            raise ValueError("payload_bits must be a positive integer")
        if int(self.latency_budget) != self.latency_budget or self.latency_budget <= 0:
            raise ValueError("latency_budget must be a positive integer")
        if int(self.rounds) != self.rounds or self.rounds <= 0:
            raise ValueError("rounds must be a positive integer")
        if int(self.min_blocklength) != self.min_blocklength or self.min_blocklength <= 0:
            raise ValueError("min_blocklength must be a positive integer")
        if not 0.5 < self.reliability_target < 1.0:
            raise ValueError("reliability_target must lie in (0.5, 1)")
        if self.latency_budget < self.rounds * self.min_blocklength:
            raise InfeasibleSpecError(
                f"N={self.latency_budget} cannot host {self.rounds} rounds of "
                f"at least {self.min_blocklength} symbols"
            )
        # region where blocklength beats power; always true for realistic payloads
        from .fbl import q_func

        floor = q_func(math.sqrt(2.0 * self.payload_bits * LN2) / 3.0)
        if not 1.0 - self.reliability_target > floor:
            raise ValueError(
                f"outage target {1.0 - self.reliability_target:.3g} is below "
                f"the validity floor {floor:.3g} for B={self.payload_bits}"
            )

    @property
    def payload_nats(self) -> float:
        return self.payload_bits * LN2

    @property
    def outage_target(self) -> float:
        return 1.0 - self.reliability_target

    def with_rounds(self, rounds: int) -> ProblemSpec:
        return ProblemSpec(
            self.payload_bits,
            self.latency_budget,
            self.reliability_target,
            rounds,
            self.delay_model,
            self.min_blocklength,
        )

    def with_budget(self, latency_budget: int) -> ProblemSpec:
        return ProblemSpec(
            self.payload_bits,
            latency_budget,
            self.reliability_target,
            self.rounds,
            self.delay_model,
            self.min_blocklength,
        )

    def with_delay(self, delay_model: DelayModel) -> ProblemSpec:
        return ProblemSpec(
            self.payload_bits,
            self.latency_budget,
            self.reliability_target,
            self.rounds,
            delay_model,
            self.min_blocklength,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "B_bits": self.payload_bits,
            "N": self.latency_budget,
            "T_rel": self.reliability_target,
            "M": self.rounds,
            "delay": self.delay_model.to_dict(),
            "n_min": self.min_blocklength,
        }


@dataclass(frozen=True)
class RoundPlan:
    """Per-round blocklengths (channel uses) and per-symbol powers."""

    blocklengths: tuple[int, ...]
    powers: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "blocklengths", tuple(int(n) for n in self.blocklengths))
        object.__setattr__(self, "powers", tuple(float(p) for p in self.powers))
        if len(self.blocklengths) != len(self.powers) or not self.blocklengths:
            raise ValueError("blocklengths and powers must be non-empty and equally long")
        if any(n < 1 for n in self.blocklengths):
            raise ValueError("every blocklength must be >= 1")
        if any(not (p >= 0.0) for p in self.powers):
            raise ValueError("every power must be >= 0")

    @property
    def rounds(self) -> int:
        return len(self.blocklengths)

    @property
    def round_energies(self) -> tuple[float, ...]:
        return tuple(n * p for n, p in zip(self.blocklengths, self.powers))

    def prefix(self, m: int) -> RoundPlan:
        return RoundPlan(self.blocklengths[:m], self.powers[:m])


@dataclass(frozen=True)
class HarqState:
    """Trellis state after a round: cumulative symbols, dispersion and margin."""

    cum_blocklength: int
    cum_dispersion: float
    margin: float


@dataclass
class OptimizationResult:
    plan: RoundPlan
    per_round_eps: tuple[float, ...]
    energy: float
    latency_used: float
    budget: int
    delay_model: DelayModel
    method: str
    grid_meta: dict[str, Any] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    @property
    def margins(self) -> tuple[float, ...]:
        from .fbl import q_inv

        return tuple(q_inv(e) for e in self.per_round_eps)

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": self.method,
            "plan": {
                "blocklengths": list(self.plan.blocklengths),
                "powers": list(self.plan.powers),
            },
            "per_round_eps": list(self.per_round_eps),
            "energy": self.energy,
            "latency": {
                "budget": self.budget,
                "symbols_used": int(sum(self.plan.blocklengths)),
                "latency_used": self.latency_used,
            },
            "grid": dict(self.grid_meta),
            "delay_model": self.delay_model.to_dict(),
            "warnings": list(self.warnings),
        }
