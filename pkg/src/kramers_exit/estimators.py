"""scikit-learn style wrappers around the prefactor and density-shape computations.

The "training data" is the problem itself, passed as a problem-file
dictionary at construction, so ``fit`` ignores ``X``. Predictions take
temperatures ``h`` (a 1-D array) or points (an ``(n, d)`` array).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .flow import divergence_integral, normalization_constant
from .kramers import (
    compute_prefactor,
    log_mean_exit_time,
    log_principal_eigenvalue,
    predict_mean_exit_time,
    predict_principal_eigenvalue,
)
from .problem import spec_from_document
from .wellspec import ProblemSpec, verify_assumptions


def check_temperatures(h) -> np.ndarray:
    """1-D float array of strictly positive, finite temperatures."""
    h = check_array(np.atleast_1d(np.asarray(h, dtype=float)), ensure_2d=False, ensure_all_finite=True)
    if h.ndim != 1:
        raise ValueError("temperatures must be a scalar or a 1-D array")
    if np.any(h <= 0):
        raise ValueError("temperatures must be positive")
    return h


def check_points(X, dimension: int) -> np.ndarray:
    """``(n, d)`` float array of finite points."""
    X = check_array(X, ensure_2d=True, ensure_all_finite=True, dtype=float)
    if X.shape[1] != dimension:
        raise ValueError(f"expected {dimension} columns, got {X.shape[1]}")
    return X


def _spec(problem) -> ProblemSpec:
    if isinstance(problem, ProblemSpec):
        return problem
    if isinstance(problem, dict):
        return spec_from_document(problem)
    raise TypeError("problem must be a problem-file dict or a ProblemSpec")


class EyringKramersEstimator(BaseEstimator):
    """Leading-order mean exit time and principal eigenvalue as functions of ``h``.

    Parameters
    ----------
    problem : dict or ProblemSpec
        Problem-file document (``dimension``, ``f``, ``ell``, ``domain``, ``witness``, ``options``).
    verify : bool
        Run the assumption checks in ``fit`` and refuse to fit when one fails.
    """

    def __init__(self, problem=None, verify: bool = True):
        self.problem = problem
        self.verify = verify

    def fit(self, X=None, y=None):
        spec = _spec(self.problem)
        self.assumptions_ = verify_assumptions(spec) if self.verify else None
        self.report_ = compute_prefactor(spec, self.assumptions_, verify=self.verify)
        self.kappa0_ = self.report_.kappa0
        self.zeta0_ = self.report_.zeta0
        self.barrier_ = self.report_.barrier
        self.x0_ = self.report_.x0
        self.n_features_in_ = spec.dimension
        return self

    def predict(self, h) -> np.ndarray:
        """Mean exit time from near ``x0``."""
        check_is_fitted(self, "report_")
        return predict_mean_exit_time(self.report_, check_temperatures(h))

    def predict_log(self, h) -> np.ndarray:
        check_is_fitted(self, "report_")
        return log_mean_exit_time(self.report_, check_temperatures(h))

    def predict_eigenvalue(self, h) -> np.ndarray:
        check_is_fitted(self, "report_")
        return predict_principal_eigenvalue(self.report_, check_temperatures(h))

    def predict_log_eigenvalue(self, h) -> np.ndarray:
        check_is_fitted(self, "report_")
        return log_principal_eigenvalue(self.report_, check_temperatures(h))


class StationaryDensityShape(TransformerMixin, BaseEstimator):
    """Maps points of the well's basin to ``R0(x)``, shape ``(n, 1)``."""

    def __init__(self, problem=None):
        self.problem = problem

    def fit(self, X=None, y=None):
        self.spec_ = _spec(self.problem)
        self.c0_ = normalization_constant(self.spec_)
        self.n_features_in_ = self.spec_.dimension
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "spec_")
        X = check_points(X, self.n_features_in_)
        out = np.empty((X.shape[0], 1))
        for i, x in enumerate(X):
            out[i, 0] = self.c0_ * np.exp(divergence_integral(self.spec_, x).value)
        return out
