"""Energy-minimal IR-HARQ schedules under the finite-blocklength normal approximation."""

from .asymptotic import EnergySplit, asymptotic_objective, limit_integral, solve_e_as
from .bruteforce import SearchGrid, SurfaceCell, grid_search, objective_surface, surface_argmin
from .dp import DPGrid, LayerTable, StateGrid, TrellisDP, dp_layer_step, init_layer2, run_dp
from .dplinear import LinearDelayTrellis, run_dp_linear_delay
from .fbl import (
    average_energy,
    e_noharq_infinity,
    implied_power,
    outage_prob,
    per_round_outage,
    q_func,
    q_inv,
    region_b_contains,
    state_backward,
    state_forward,
    state_init,
)
from .model import (
    DegenerateStateError,
    DelayModel,
    HarqError,
    HarqState,
    InfeasibleSpecError,
    InfeasibleTransitionError,
    NoSolutionError,
    OptimizationResult,
    ProblemSpec,
    RoundPlan,
)
from .polish import polish_plan
from .solvers import LatencyBudget, latency_budget, one_shot_optimum, solve_power_bisection
from .sweep import MSweep, sweep_optimal_m

__version__ = "0.1.0"
