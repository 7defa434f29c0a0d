"""Capacity-coupled routing games and inverse recovery of their costs."""

from .analysis import flow_error, normalized_flow_error, spectral_check, summarize_trials
from .equilibrium import (
    DidNotConvergeError,
    InfeasibleError,
    SolverSettings,
    feasibility_check,
    solve_equilibrium,
    solve_potential_oracle,
)
from .experiment import ExperimentConfig, generate_observations, randomize_costs, run_group, run_trial
from .game import (
    CostMode,
    CostParameterization,
    EquilibriumSolution,
    GameInstance,
    eval_F,
    interaction_matrix,
    kkt_residuals,
    potential_value,
)
from .inverse import (
    ObservationSet,
    ParameterBounds,
    actual_variable_count,
    build_residual_program,
    predicted_variable_count,
    recover_parameters,
)
from .lp import LinearProgram, solve_lp
from .network import Network, ODPair, build_grid, demand_vector, enumerate_od_pairs, incidence_matrix, load_network_file

__version__ = "0.1.0"

__all__ = [
    "CostMode",
    "CostParameterization",
    "DidNotConvergeError",
    "EquilibriumSolution",
    "ExperimentConfig",
    "GameInstance",
    "InfeasibleError",
    "LinearProgram",
    "Network",
    "ODPair",
    "ObservationSet",
    "ParameterBounds",
    "SolverSettings",
    "actual_variable_count",
    "build_grid",
    "build_residual_program",
    "demand_vector",
    "enumerate_od_pairs",
    "eval_F",
    "feasibility_check",
    "flow_error",
    "generate_observations",
    "incidence_matrix",
    "interaction_matrix",
    "kkt_residuals",
    "load_network_file",
    "normalized_flow_error",
    "potential_value",
    "predicted_variable_count",
    "randomize_costs",
    "recover_parameters",
    "run_group",
    "run_trial",
    "solve_equilibrium",
    "solve_lp",
    "solve_potential_oracle",
    "spectral_check",
    "summarize_trials",
]
