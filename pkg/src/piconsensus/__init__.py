"""Distributed PI optimal output consensus for heterogeneous linear agents.

Continuous, periodic-sampling and event-triggered communication variants,
with validation of the standing assumptions and post-run analysis.
"""
from .analysis import audit_lyapunov, event_stats, fit_rate
from .control import ControllerConfig, make_config
from .costs import CostEnsemble, CostFunction, example1_costs, solve_optimum
from .errors import (
    AnalysisError,
    AssumptionError,
    ConfigError,
    ConsensusError,
    DivergenceError,
    DomainError,
    GraphError,
)
from .graph import NetworkGraph, build_graph, gamma_matrix, is_connected
from .plant import AgentPlant, GainPair, synthesize_gains, validate_assumption4
from .scenario import build_scenario, load_document
from .sim import Scenario, SimulationTrace, run, run_batch

__version__ = "0.1.0"

__all__ = [
    "AgentPlant", "AnalysisError", "AssumptionError", "ConfigError", "ConsensusError", "ControllerConfig",
    "CostEnsemble", "CostFunction", "DivergenceError", "DomainError", "GainPair", "GraphError", "NetworkGraph",
    "Scenario", "SimulationTrace", "audit_lyapunov", "build_graph", "build_scenario", "event_stats",
    "example1_costs", "fit_rate", "gamma_matrix", "is_connected", "load_document", "make_config", "run",
    "run_batch", "solve_optimum", "synthesize_gains", "validate_assumption4",
]
