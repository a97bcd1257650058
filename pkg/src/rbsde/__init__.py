"""Penalization schemes for reflected BSDEs with jumps in time-dependent convex domains."""
from .bsde_core import (
    BackwardSolution,
    BSDESolver,
    RegressionBasis,
    Scenario,
    backward_solve,
    backward_solve_unconstrained,
    backward_step,
    backward_sweep,
)
from .exceptions import ConfigurationError, DomainError, InputError, NumericalError, RBSDEError
from .geometry import BallTube, HalfspaceTube, interior_anchor, modulus, validate_tube
from .harness import RateReport, SweepPlan, emit_report, fit_rate, load_report, run_sweep
from .noise import ForwardSpec, LevyNoiseSpec, PathBundle, TimeGrid, forward_euler, sample_paths
from .penalty import (
    backward_solve_penalized,
    penalized_step,
    penalty_metrics,
    skorokhod_diagnostics,
)
from .scenarios import REGISTRY, build_scenario, scenario

__version__ = "0.1.0"

__all__ = [
    "BackwardSolution", "BSDESolver", "RegressionBasis", "Scenario", "backward_solve",
    "backward_solve_unconstrained", "backward_step", "backward_sweep",
    "ConfigurationError", "DomainError", "InputError", "NumericalError", "RBSDEError",
    "BallTube", "HalfspaceTube", "interior_anchor", "modulus", "validate_tube",
    "RateReport", "SweepPlan", "emit_report", "fit_rate", "load_report", "run_sweep",
    "ForwardSpec", "LevyNoiseSpec", "PathBundle", "TimeGrid", "forward_euler", "sample_paths",
    "backward_solve_penalized", "penalized_step", "penalty_metrics", "skorokhod_diagnostics",
    "REGISTRY", "build_scenario", "scenario", "__version__",
]
