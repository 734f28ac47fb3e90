"""Minimizing-movement schemes for gradient flows with time-dependent mobility."""

from .grid import Grid1D, DensityField, make_field, mass, second_moment
from .mobility import (MobilitySpec, make_mobility, heat_entropy_density, heat_entropy,
                       check_admissibility, approximate_mobility)
from .energy import EnergySpec, make_energy, eval_energy, first_variation
from .transport import action, bb_distance_squared, w2_squared_1d, TransportPath, MetricResult
from .jko import JkoConfig, DiscreteSolution, jko_step, run_scheme
from .reference import Trajectory, reference_solve, compare_trajectories
from .diagnostics import DiagnosticsReport, TestFunctionPair, run_report, refinement_report
from .config import ExperimentConfig, ConfigError, load_config

__version__ = "0.1.0"

__all__ = [
    "Grid1D", "DensityField", "make_field", "mass", "second_moment",
    "MobilitySpec", "make_mobility", "heat_entropy_density", "heat_entropy",
    "check_admissibility", "approximate_mobility",
    "EnergySpec", "make_energy", "eval_energy", "first_variation",
    "action", "bb_distance_squared", "w2_squared_1d", "TransportPath", "MetricResult",
    "JkoConfig", "DiscreteSolution", "jko_step", "run_scheme",
    "Trajectory", "reference_solve", "compare_trajectories",
    "DiagnosticsReport", "TestFunctionPair", "run_report", "refinement_report",
    "ExperimentConfig", "ConfigError", "load_config",
]
