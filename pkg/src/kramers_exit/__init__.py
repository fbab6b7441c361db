"""Sharp exit-time asymptotics for non-reversible diffusions, with numerical cross-checks."""

__version__ = "0.1.0"

from .expr import ParseError, ScalarField, VectorField, parse
from .geometry import ImplicitDomain
from .kramers import (
    PrefactorReport,
    compute_prefactor,
    predict_mean_exit_time,
    predict_principal_eigenvalue,
)
from .problem import load_example, load_problem
from .wellspec import ProblemSpec, SolverOptions, verify_assumptions

__all__ = [
    "ImplicitDomain",
    "ParseError",
    "PrefactorReport",
    "ProblemSpec",
    "ScalarField",
    "SolverOptions",
    "VectorField",
    "__version__",
    "compute_prefactor",
    "load_example",
    "load_problem",
    "parse",
    "predict_mean_exit_time",
    "predict_principal_eigenvalue",
    "verify_assumptions",
]
