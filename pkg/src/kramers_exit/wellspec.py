"""Problem description, standing-assumption checks, and the critical-point searches.

The drift is ``b = -(grad f + ell)`` with ``ell . grad f = 0``; the searches
locate the unique interior minimum ``x0`` of ``f`` and the global minimizers of
``f`` on the boundary (the generalized saddle points).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields, replace
from functools import cached_property
from typing import Optional

import numpy as np

from .expr import EvaluationError, ScalarField, VectorField, parse, parse_vector
from .geometry import BoundaryFrame, GeometryError, ImplicitDomain, ProjectionError

logger = logging.getLogger(__name__)


class WellSpecError(ValueError):
    pass


class NoConvergenceError(WellSpecError):
    pass


class MultipleCriticalPointsError(WellSpecError):
    def __init__(self, points):
        self.points = [np.asarray(p) for p in points]
        super().__init__(
            f"found {len(self.points)} distinct interior critical points: "
            + ", ".join(str(np.round(p, 8).tolist()) for p in self.points)
        )


class NotPositiveDefiniteError(WellSpecError):
    pass


class SaddleSearchError(WellSpecError):
    """Saddle search failed; ``saddles`` holds whatever was found."""

    def __init__(self, message, saddles=None):
        self.saddles = saddles
        super().__init__(message)


class CharacteristicBoundaryError(SaddleSearchError):
    pass


class DegenerateSaddleError(SaddleSearchError):
    pass


@dataclass
class SolverOptions:
    seed: int = 0
    n_samples: int = 10_000
    interior_starts: Optional[int] = None  # default 16*d
    boundary_starts: Optional[int] = None  # default 32*d
    tol_crit: float = 1e-8
    tol_level_rel: float = 1e-9
    dedupe_rel: float = 1e-6
    det_tol: float = 1e-10
    eps_x: float = 1e-10
    eps_tail: float = 1e-12
    t_max: float = 1e3
    ode_tol: float = 1e-12

    @classmethod
    def from_dict(cls, d: dict) -> "SolverOptions":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise WellSpecError(f"unknown option(s): {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class ProblemSpec:
    """Full problem: potential ``f``, transverse field ``ell``, and domain."""

    dimension: int
    f: ScalarField
    ell: VectorField
    domain: ImplicitDomain
    witness: np.ndarray
    options: SolverOptions = field(default_factory=SolverOptions)
    name: str = ""

    def __post_init__(self):
        if self.dimension < 1:
            raise WellSpecError("dimension must be >= 1")
        if self.f.dimension != self.dimension or self.ell.dimension != self.dimension:
            raise WellSpecError("f and ell must share the problem dimension")
        if self.domain.dimension != self.dimension:
            raise WellSpecError("domain dimension mismatch")
        self.witness = np.asarray(self.witness, dtype=float).reshape(self.dimension)
        if not self.domain.g(self.witness) < 0:
            raise WellSpecError(
                f"witness {self.witness.tolist()} is not inside the domain (need g < 0)"
            )

    @classmethod
    def from_strings(cls, f: str, ell, domain: ImplicitDomain, witness, options=None, name=""):
        d = domain.dimension
        ell_field = VectorField.zeros(d) if ell is None else VectorField(parse_vector(ell, d), d)
        return cls(
            dimension=d,
            f=ScalarField(parse(f, d), d),
            ell=ell_field,
            domain=domain,
            witness=witness,
            options=options or SolverOptions(),
            name=name,
        )

    def with_options(self, **kwargs) -> "ProblemSpec":
        return replace(self, options=replace(self.options, **kwargs))

    def drift(self, x):
        """``b(x) = -(grad f + ell)(x)``."""
        return -(self.f.gradient(x) + self.ell(x))

    def psi_field(self, x):
        """Vector field of the flow along which the divergence is integrated."""
        return -(self.f.gradient(x) - self.ell(x))

    @cached_property
    def minimum(self) -> "InteriorMinimum":
        """Cached :func:`find_interior_minimum` result."""
        return find_interior_minimum(self)

    @cached_property
    def saddle_set(self) -> "SaddleSet":
        """Cached strict :func:`find_saddle_set` result."""
        return find_saddle_set(self, x0_value=self.minimum.f_value)

    @property
    def n_interior_starts(self) -> int:
        return self.options.interior_starts or 16 * self.dimension

    @property
    def n_boundary_starts(self) -> int:
        return self.options.boundary_starts or 32 * self.dimension


@dataclass
class Saddle:
    point: np.ndarray
    f_value: float
    mu: float
    hessian: np.ndarray
    det_hessian: float
    frame: BoundaryFrame

    def to_json(self) -> dict:
        return {
            "z": self.point.tolist(),
            "f": self.f_value,
            "mu": self.mu,
            "boundary_hessian": self.hessian.tolist(),
            "det_boundary_hessian": self.det_hessian,
            "normal": self.frame.normal.tolist(),
        }


@dataclass
class SaddleSet:
    saddles: list
    min_boundary_f: float
    tol_level: float

    def __len__(self):
        return len(self.saddles)

    def __iter__(self):
        return iter(self.saddles)

    @property
    def points(self) -> np.ndarray:
        return np.array([s.point for s in self.saddles])

    def to_json(self) -> dict:
        return {
            "min_boundary_f": self.min_boundary_f,
            "tol_level": self.tol_level,
            "saddles": [s.to_json() for s in self.saddles],
        }


@dataclass
class InteriorMinimum:
    x0: np.ndarray
    hessian: np.ndarray
    f_value: float

    @property
    def det_hessian(self) -> float:
        return float(np.linalg.det(self.hessian))


# ---------------------------------------------------------------------------
# interior minimum


def _newton_critical(f: ScalarField, x, tol=1e-10, max_iter=100):
    """Damped Newton on ``grad f = 0``; returns the point or None."""
    x = np.array(x, dtype=float)
    try:
        g = f.gradient(x)
        for _ in range(max_iter):
            gn = float(np.linalg.norm(g))
            if gn <= tol:
                return x
            H = f.hessian(x)
            try:
                p = np.linalg.solve(H, -g)
            except np.linalg.LinAlgError:
                p = np.linalg.lstsq(H, -g, rcond=None)[0]
            alpha = 1.0
            for _ in range(40):
                xn = x + alpha * p
                gnew = f.gradient(xn)
                if np.linalg.norm(gnew) < (1 - 1e-4 * alpha) * gn:
                    break
                alpha *= 0.5
            else:
                return None
            x, g = xn, gnew
        return x if np.linalg.norm(g) <= tol else None
    except (EvaluationError, FloatingPointError):
        return None


def _cluster(points, radius):
    reps = []
    for p in points:
        if all(np.linalg.norm(p - q) > radius for q in reps):
            reps.append(p)
    return reps


def find_interior_minimum(spec: ProblemSpec) -> InteriorMinimum:
    """Locate the unique interior critical point ``x0`` of ``f`` and its Hessian.

    Multistart damped Newton from the witness plus seeded random interior
    points. Raises if nothing converges, if two distinct critical points are
    found, or if the Hessian at the critical point is not positive definite.
    """
    rng = np.random.default_rng([spec.options.seed, 1])
    n = spec.n_interior_starts
    starts = [spec.witness]
    if n > 1:
        starts += list(spec.domain.sample_interior(n - 1, rng).T)
    found = []
    for s in starts:
        x = _newton_critical(spec.f, s)
        if x is not None and spec.domain.g(x) < 0:
            found.append(x)
    if not found:
        raise NoConvergenceError("damped Newton found no interior critical point of f")
    radius = spec.options.dedupe_rel * spec.domain.diameter
    reps = _cluster(found, max(radius, 1e-9))
    if len(reps) > 1:
        raise MultipleCriticalPointsError(sorted(reps, key=lambda p: tuple(p)))
    # polish from the best converged start
    x0 = min(found, key=lambda p: float(np.linalg.norm(spec.f.gradient(p))))
    H = spec.f.hessian(x0)
    H = 0.5 * (H + H.T)
    eig = np.linalg.eigvalsh(H)
    if eig[0] <= 0:
        raise NotPositiveDefiniteError(
            f"Hessian of f at critical point {x0.tolist()} is not positive definite (min eig {eig[0]:.3e})"
        )
    return InteriorMinimum(x0=x0, hessian=H, f_value=float(spec.f(x0)))


# ---------------------------------------------------------------------------
# boundary minimizers


def _tangential_gradient(spec, z):
    gf = spec.f.gradient(z)
    dg = spec.domain.g.gradient(z)
    n = dg / np.linalg.norm(dg)
    return gf - (gf @ n) * n


def _projected_descent(spec, z, max_iter=400, tol=1e-7):
    """Projected gradient descent of f along the boundary."""
    dom, f = spec.domain, spec.f
    fz = f(z)
    step = 0.1 * dom.diameter
    for _ in range(max_iter):
        pg = _tangential_gradient(spec, z)
        pn = float(np.linalg.norm(pg))
        if pn <= tol:
            break
        while step > 1e-14 * dom.diameter:
            try:
                zn = dom.project_to_boundary(z - (step / pn) * pg)
                fn = f(zn)
            except (ProjectionError, EvaluationError):
                step *= 0.5
                continue
            if fn < fz - 1e-4 * step * pn:
                z, fz = zn, fn
                step *= 1.5
                break
            step *= 0.5
        else:
            break
    return z


def _lagrange_newton(spec, z, max_iter=50):
    """Newton on ``grad f + lam grad g = 0, g = 0``."""
    dom, f = spec.domain, spec.f
    d = spec.dimension
    dg = dom.g.gradient(z)
    lam = -float(f.gradient(z) @ dg) / float(dg @ dg)
    for _ in range(max_iter):
        gf = f.gradient(z)
        dg = dom.g.gradient(z)
        F = np.concatenate([gf + lam * dg, [dom.g(z)]])
        if np.linalg.norm(F[:d]) <= 1e-14 * max(1.0, np.linalg.norm(gf)) and abs(F[d]) <= dom.eps_proj:
            break
        J = np.zeros((d + 1, d + 1))
        J[:d, :d] = f.hessian(z) + lam * dom.g.hessian(z)
        J[:d, d] = dg
        J[d, :d] = dg
        try:
            step = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            break
        z = z + step[:d]
        lam = lam + step[d]
        if np.linalg.norm(step) <= 1e-15 * max(1.0, np.linalg.norm(z)):
            break
    return dom.project_to_boundary(z)


def _boundary_starts(spec, rng):
    n = spec.n_boundary_starts
    pts = spec.domain.sample_box(n, rng)
    out = []
    for x in pts.T:
        try:
            out.append(spec.domain.project_to_boundary(x))
        except ProjectionError:
            continue
    return out


def find_saddle_set(
    spec: ProblemSpec, x0_value: float | None = None, strict: bool = True
) -> SaddleSet:
    """Global minimizers of ``f`` on the boundary, with ``mu_z`` and ``H_z``.

    Parameters
    ----------
    x0_value : float, optional
        ``f(x0)``; sets the barrier scale for the level tolerance. Computed
        when omitted.
    strict : bool
        Raise on a nonpositive normal derivative or a degenerate boundary
        Hessian. With ``strict=False`` the set is returned as found.
    """
    opts = spec.options
    rng = np.random.default_rng([opts.seed, 2])
    candidates = []
    for z in _boundary_starts(spec, rng):
        try:
            z = _projected_descent(spec, z)
            z = _lagrange_newton(spec, z)
        except (ProjectionError, EvaluationError, GeometryError) as exc:
            logger.debug("boundary start discarded: %s", exc)
            continue
        tg = np.linalg.norm(_tangential_gradient(spec, z))
        if tg <= opts.tol_crit * max(1.0, np.linalg.norm(spec.f.gradient(z))):
            candidates.append(z)
    if not candidates:
        raise SaddleSearchError("no critical point of f on the boundary was found")

    fvals = np.array([spec.f(z) for z in candidates])
    fmin = float(fvals.min())
    if x0_value is None:
        try:
            x0_value = find_interior_minimum(spec).f_value
        except WellSpecError:
            x0_value = None
    barrier = fmin - x0_value if x0_value is not None else 0.0
    tol_level = opts.tol_level_rel * (barrier if barrier > 0 else 1.0)
    keep = [z for z, fv in zip(candidates, fvals) if fv - fmin <= tol_level]
    radius = opts.dedupe_rel * spec.domain.diameter
    reps = _cluster(keep, radius)
    reps.sort(key=lambda p: tuple(np.round(p, 9)))

    saddles = []
    for z in reps:
        H, mu, frame = spec.domain.boundary_hessian(spec.f, z, tol_crit=opts.tol_crit)
        saddles.append(
            Saddle(
                point=frame.point,
                f_value=float(spec.f(frame.point)),
                mu=mu,
                hessian=H,
                det_hessian=float(np.linalg.det(H)),
                frame=frame,
            )
        )
    result = SaddleSet(saddles=saddles, min_boundary_f=fmin, tol_level=tol_level)
    if strict:
        bad_mu = [s for s in saddles if s.mu <= 0]
        if bad_mu:
            raise CharacteristicBoundaryError(
                f"nonpositive normal derivative of f at {bad_mu[0].point.tolist()}", result
            )
        bad_det = [s for s in saddles if abs(s.det_hessian) < opts.det_tol]
        if bad_det:
            raise DegenerateSaddleError(
                f"degenerate boundary Hessian (det {bad_det[0].det_hessian:.3e}) at "
                f"{bad_det[0].point.tolist()}",
                result,
            )
    return result


# ---------------------------------------------------------------------------
# assumption report


@dataclass
class Check:
    name: str
    status: str  # "pass" | "fail" | "warn"
    detail: str
    values: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"name": self.name, "status": self.status, "detail": self.detail, "values": self.values}


@dataclass
class AssumptionReport:
    checks: list
    minimum: Optional[InteriorMinimum] = None
    saddles: Optional[SaddleSet] = None

    @property
    def passed(self) -> bool:
        return all(c.status != "fail" for c in self.checks)

    def __getitem__(self, name) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_json(self) -> dict:
        out = {"passed": self.passed, "checks": [c.to_json() for c in self.checks]}
        if self.minimum is not None:
            out["x0"] = self.minimum.x0.tolist()
            out["hess_f_x0"] = self.minimum.hessian.tolist()
        if self.saddles is not None:
            out["saddle_set"] = self.saddles.to_json()
        return out

    def table(self) -> str:
        width = max(len(c.name) for c in self.checks)
        lines = [f"{'assumption'.ljust(width)}  status  detail"]
        for c in self.checks:
            lines.append(f"{c.name.ljust(width)}  {c.status.ljust(6)}  {c.detail}")
        return "\n".join(lines)


def _sample_closure(spec, n, rng):
    """Points of the closed domain: interior samples plus projected boundary points."""
    n_bdry = max(1, n // 5)
    interior = spec.domain.sample_interior(n - n_bdry, rng)
    bdry = []
    for x in spec.domain.sample_box(n_bdry, rng).T:
        try:
            bdry.append(spec.domain.project_to_boundary(x))
        except ProjectionError:
            continue
    bdry = np.array(bdry).T if bdry else np.zeros((spec.dimension, 0))
    return interior, bdry


def verify_assumptions(spec: ProblemSpec) -> AssumptionReport:
    """Check the standing assumptions at sample points; never raises for a failed check."""
    opts = spec.options
    rng = np.random.default_rng([opts.seed, 3])
    checks = []

    # domain sanity
    dom = spec.domain
    faces = []
    for axis in range(spec.dimension):
        for side in (0, 1):
            pts = dom.sample_box(64, rng)
            pts[axis, :] = dom.bbox[axis, side]
            faces.append(pts)
    faces = np.concatenate(faces, axis=1)
    inside_faces = int(np.sum(dom.g(faces) < 0))
    interior, bdry = _sample_closure(spec, opts.n_samples, rng)
    grad_g_min = float(np.min(np.linalg.norm(dom.g.gradient(bdry), axis=0))) if bdry.size else float("nan")
    ok = inside_faces == 0 and bdry.size > 0 and grad_g_min > 0
    checks.append(
        Check(
            "domain",
            "pass" if ok else "fail",
            f"bbox faces inside Omega: {inside_faces}; min |grad g| on boundary samples: {grad_g_min:.3e}",
            {"faces_inside": inside_faces, "min_grad_g": grad_g_min, "boundary_samples": int(bdry.shape[1])},
        )
    )

    # orthogonality of ell and grad f
    pts = np.concatenate([interior, bdry], axis=1)
    try:
        gf = spec.f.gradient(pts)
        dot = np.abs(np.sum(spec.ell(pts) * gf, axis=0))
        max_dot = float(dot.max())
        max_gf2 = float(np.max(np.sum(gf * gf, axis=0)))
        ok = max_dot <= 1e-8 * (1.0 + max_gf2)
        checks.append(
            Check(
                "A_perp",
                "pass" if ok else "fail",
                f"max |ell . grad f| = {max_dot:.3e} over {pts.shape[1]} samples",
                {"max_abs_ell_dot_grad_f": max_dot, "max_grad_f_sq": max_gf2, "samples": int(pts.shape[1])},
            )
        )
    except EvaluationError as exc:
        checks.append(Check("A_perp", "fail", f"evaluation fault: {exc}"))

    # unique nondegenerate minimum
    minimum = None
    try:
        minimum = find_interior_minimum(spec)
        x0 = minimum.x0
        eig = np.linalg.eigvalsh(minimum.hessian)
        b0 = float(np.linalg.norm(spec.drift(x0)))
        ok = b0 <= 1e-8
        checks.append(
            Check(
                "A_x0",
                "pass" if ok else "fail",
                f"x0 = {np.round(x0, 10).tolist()}, min eig Hess f(x0) = {eig[0]:.6g}, |b(x0)| = {b0:.3e}",
                {"x0": x0.tolist(), "min_eig_hess_f": float(eig[0]), "abs_b_x0": b0},
            )
        )
        div0 = abs(float(spec.ell.div(x0)))
        checks.append(
            Check(
                "div_ell_x0",
                "pass" if div0 <= 1e-8 else "fail",
                f"|div ell(x0)| = {div0:.3e}",
                {"abs_div_ell_x0": div0},
            )
        )
    except WellSpecError as exc:
        checks.append(Check("A_x0", "fail", str(exc)))

    # growth conditions: only checkable on the box
    try:
        box = dom.sample_box(min(opts.n_samples, 2000), rng)
        hf = spec.f.hessian(box)
        jl = spec.ell.jacobian(box)
        hmax = float(np.max(np.abs(hf)))
        jmax = float(np.max(np.abs(jl)))
        checks.append(
            Check(
                "A_inf",
                "warn",
                f"bounded on bbox (max |Hess f| = {hmax:.3g}, max |Jac ell| = {jmax:.3g}); "
                "global growth and coercivity are not checkable from samples",
                {"max_abs_hess_f": hmax, "max_abs_jac_ell": jmax},
            )
        )
    except EvaluationError as exc:
        checks.append(Check("A_inf", "fail", f"evaluation fault on bbox: {exc}"))

    # generalized saddle points
    saddles = None
    try:
        saddles = find_saddle_set(spec, x0_value=minimum.f_value if minimum else None, strict=False)
        mus = [s.mu for s in saddles]
        dets = [abs(s.det_hessian) for s in saddles]
        barrier = saddles.min_boundary_f - minimum.f_value if minimum else float("nan")
        ok = min(mus) > 0 and min(dets) >= opts.det_tol and (minimum is None or barrier > 0)
        checks.append(
            Check(
                "A_Psp",
                "pass" if ok else "fail",
                f"{len(saddles)} saddle(s); min mu_z = {min(mus):.6g}; min |det H_z| = {min(dets):.6g}",
                {"n_saddles": len(saddles), "min_mu": float(min(mus)), "min_abs_det_H": float(min(dets))},
            )
        )
    except (WellSpecError, GeometryError) as exc:
        checks.append(Check("A_Psp", "fail", str(exc)))

    return AssumptionReport(checks=checks, minimum=minimum, saddles=saddles)
