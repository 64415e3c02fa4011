"""Constrained Bayesian optimization with decoupled objective and constraint
evaluation: probabilistic constraints, constraint-weighted expected
improvement, feasibility search, and entropy-based task selection."""

__version__ = "0.1.0"

from .constraints import ConstraintSpec, LatentTransform
from .errors import (
    ConboError,
    ConfigError,
    EvaluationFailure,
    InputError,
    NumericalError,
    StateError,
)
from .gp import KernelHyperparameters, fit_gp
from .optimizer import (
    ConstrainedOptimizer,
    McmcSettings,
    Problem,
    ProblemConstraint,
    Recommendation,
    SearchSettings,
)

__all__ = [
    "ConboError",
    "ConfigError",
    "ConstrainedOptimizer",
    "ConstraintSpec",
    "EvaluationFailure",
    "InputError",
    "KernelHyperparameters",
    "LatentTransform",
    "McmcSettings",
    "NumericalError",
    "Problem",
    "ProblemConstraint",
    "Recommendation",
    "SearchSettings",
    "StateError",
    "fit_gp",
    "__version__",
]
