"""Leading-order Eyring-Kramers prefactor and the resulting predictions.

For a problem with unique well ``x0`` and boundary minimizers ``z``::

    1/kappa0 = sqrt(det Hess f(x0) / pi)
               * sum_z mu_z / sqrt(det H_z) * exp(I_z)

    E_x[tau]  ~ kappa0 * sqrt(h) * exp(2 * barrier / h)
    lambda_h  ~ zeta0  / sqrt(h) * exp(-2 * barrier / h),   zeta0 = 1/kappa0

where ``mu_z`` is the outward normal derivative of ``f``, ``H_z`` the boundary
Hessian and ``I_z`` the divergence integral along the relaxation flow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .expr import BinOp, Const, Expression, ScalarField
from .flow import DivergenceIntegral, divergence_integral
from .wellspec import AssumptionReport, ProblemSpec, verify_assumptions


class PrefactorError(ValueError):
    pass


@dataclass
class SaddleContribution:
    z: np.ndarray
    mu: float
    det_hessian: float
    integral: DivergenceIntegral
    weight: float  # mu / sqrt(det H) * exp(I)

    @property
    def non_gibbsian_factor(self) -> float:
        return math.exp(self.integral.value)

    def to_json(self) -> dict:
        return {
            "z": self.z.tolist(),
            "mu": self.mu,
            "det_boundary_hessian": self.det_hessian,
            "divergence_integral": self.integral.value,
            "divergence_integral_error": self.integral.error,
            "divergence_integral_status": self.integral.status,
            "non_gibbsian_factor": self.non_gibbsian_factor,
            "weight": self.weight,
        }


@dataclass
class PrefactorReport:
    x0: np.ndarray
    det_hess_x0: float
    barrier: float
    saddles: list
    kappa0: float
    kappa0_error: float
    zeta0: float
    zeta0_error: float

    @property
    def log_kappa0(self) -> float:
        return math.log(self.kappa0)

    def to_json(self) -> dict:
        return {
            "x0": self.x0.tolist(),
            "det_hess_f_x0": self.det_hess_x0,
            "barrier": self.barrier,
            "kappa0": self.kappa0,
            "kappa0_error": self.kappa0_error,
            "log_kappa0": self.log_kappa0,
            "zeta0": self.zeta0,
            "zeta0_error": self.zeta0_error,
            "saddles": [s.to_json() for s in self.saddles],
        }


def _strip_additive_constants(e: Expression) -> Expression:
    """Drop constant summands at the top of a sum, so barrier differences are shift-exact."""
    if isinstance(e, BinOp) and e.op in "+-":
        if isinstance(e.right, Const):
            return _strip_additive_constants(e.left)
        if isinstance(e.left, Const) and e.op == "+":
            return _strip_additive_constants(e.right)
    return e


def compute_prefactor(
    spec: ProblemSpec, assumptions: AssumptionReport | None = None, verify: bool = True
) -> PrefactorReport:
    """Assemble ``kappa0`` and ``zeta0`` summing over all boundary minimizers.

    Raises :class:`PrefactorError` when the assumptions fail, the barrier is
    not positive, or a boundary Hessian has nonpositive determinant.
    """
    if verify:
        assumptions = assumptions or verify_assumptions(spec)
        if not assumptions.passed:
            failed = [c.name for c in assumptions.checks if c.status == "fail"]
            raise PrefactorError(f"assumptions failed: {', '.join(failed)}")
    minimum = spec.minimum
    saddle_set = spec.saddle_set
    if len(saddle_set) == 0:
        raise PrefactorError("empty saddle set")

    f0 = ScalarField(_strip_additive_constants(spec.f.expression), spec.dimension)
    barrier = float(f0(saddle_set.saddles[0].point) - f0(minimum.x0))
    if not barrier > 0:
        raise PrefactorError(f"barrier must be positive, got {barrier}")

    det0 = float(np.linalg.det(minimum.hessian))
    contributions = []
    for s in saddle_set:
        if s.det_hessian <= 0:
            raise PrefactorError(
                f"boundary Hessian at {s.point.tolist()} has det {s.det_hessian:.3e} <= 0; "
                "not a boundary minimum"
            )
        di = divergence_integral(spec, s.point)
        weight = s.mu / math.sqrt(s.det_hessian) * math.exp(di.value)
        contributions.append(SaddleContribution(s.point, s.mu, s.det_hessian, di, weight))

    zeta0 = math.sqrt(det0) / math.sqrt(math.pi) * math.fsum(c.weight for c in contributions)
    kappa0 = 1.0 / zeta0
    rel = float(max(c.integral.error for c in contributions))
    return PrefactorReport(
        x0=minimum.x0,
        det_hess_x0=det0,
        barrier=barrier,
        saddles=contributions,
        kappa0=kappa0,
        kappa0_error=kappa0 * rel,
        zeta0=zeta0,
        zeta0_error=zeta0 * rel,
    )


def _check_h(h):
    h = np.asarray(h, dtype=float)
    if np.any(~(h > 0)):
        raise ValueError("temperature h must be positive")
    return h


def log_mean_exit_time(report: PrefactorReport, h):
    """``log(kappa0 sqrt(h) exp(2 barrier / h))``; finite for any ``h > 0``."""
    h = _check_h(h)
    out = math.log(report.kappa0) + 0.5 * np.log(h) + 2.0 * report.barrier / h
    return float(out) if out.ndim == 0 else out


def predict_mean_exit_time(report: PrefactorReport, h):
    """Leading-order mean exit time; ``inf`` once it overflows (use :func:`log_mean_exit_time`)."""
    h = _check_h(h)
    with np.errstate(over="ignore"):
        out = report.kappa0 * np.sqrt(h) * np.exp(2.0 * report.barrier / h)
    return float(out) if out.ndim == 0 else out


def log_principal_eigenvalue(report: PrefactorReport, h):
    h = _check_h(h)
    out = math.log(report.zeta0) - 0.5 * np.log(h) - 2.0 * report.barrier / h
    return float(out) if out.ndim == 0 else out


def predict_principal_eigenvalue(report: PrefactorReport, h):
    """Leading-order principal eigenvalue ``zeta0 h^(-1/2) exp(-2 barrier / h)``."""
    h = _check_h(h)
    out = report.zeta0 / np.sqrt(h) * np.exp(-2.0 * report.barrier / h)
    return float(out) if out.ndim == 0 else out
