"""Batch evaluation of look-ahead economic dispatch policies on N-1 power grids."""

from .config import ConfigError, RunConfig, load_config, validate
from .convex_solver import ConvexProgram, Solution, solve
from .dispatch import (
    DispatchTrajectory,
    ExternalPolicy,
    LookAheadConfig,
    OraclePolicy,
    PerturbedPolicy,
    ProportionalPolicy,
    build_dcopf_window,
    solve_baseline,
)
from .errors import GridbenchError
from .grid_model import GridModel, PtdfMatrix, build_grid, compute_ptdf, line_flows, load_case
from .metrics import EvaluationReport, ScenarioMetrics, aggregate, compute_violations, scenario_metrics
from .scenario_gen import (
    ObservationVector,
    cluster_observations,
    compute_observation_vector,
    generate_demand_scenarios,
    select_network_scenarios,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ConvexProgram",
    "DispatchTrajectory",
    "EvaluationReport",
    "ExternalPolicy",
    "GridModel",
    "GridbenchError",
    "LookAheadConfig",
    "ObservationVector",
    "OraclePolicy",
    "PerturbedPolicy",
    "ProportionalPolicy",
    "PtdfMatrix",
    "RunConfig",
    "ScenarioMetrics",
    "Solution",
    "aggregate",
    "build_dcopf_window",
    "build_grid",
    "cluster_observations",
    "compute_observation_vector",
    "compute_ptdf",
    "compute_violations",
    "generate_demand_scenarios",
    "line_flows",
    "load_case",
    "load_config",
    "scenario_metrics",
    "select_network_scenarios",
    "solve",
    "solve_baseline",
    "validate",
]
