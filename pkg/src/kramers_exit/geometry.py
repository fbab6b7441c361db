"""Implicit domains ``{g < 0}``: projection, boundary frames, boundary Hessian."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .expr import Expression, ScalarField, parse, to_string


class GeometryError(ValueError):
    pass


class ProjectionError(GeometryError):
    """Newton projection onto the boundary failed; ``last`` is the last iterate."""

    def __init__(self, message: str, last):
        self.last = np.asarray(last, dtype=float)
        super().__init__(f"{message} (last iterate {self.last.tolist()})")


class NotCriticalError(GeometryError):
    """The boundary Hessian was requested away from a critical point of f on the boundary."""


@dataclass(frozen=True)
class BoundaryFrame:
    point: np.ndarray
    normal: np.ndarray
    tangents: np.ndarray  # shape (d-1, d), rows orthonormal

    @property
    def dimension(self) -> int:
        return self.point.shape[0]


class ImplicitDomain:
    """Bounded domain ``{x : g(x) < 0}`` contained in an axis-aligned box.

    Parameters
    ----------
    g : Expression or str
        Level-set function, negative inside.
    bbox : array_like, shape (d, 2)
        ``[[lo_1, hi_1], ..., [lo_d, hi_d]]``.
    eps_proj : float
        Boundary projection tolerance on ``|g|``.
    """

    def __init__(self, g, bbox, eps_proj: float = 1e-12, max_iter: int = 100):
        bbox = np.asarray(bbox, dtype=float)
        if bbox.ndim != 2 or bbox.shape[1] != 2:
            raise GeometryError("bbox must have shape (d, 2)")
        if np.any(bbox[:, 1] <= bbox[:, 0]):
            raise GeometryError("bbox needs lo < hi on every axis")
        self.dimension = bbox.shape[0]
        if isinstance(g, str):
            g = parse(g, self.dimension)
        self.g = ScalarField(g, self.dimension)
        self.bbox = bbox
        self.eps_proj = float(eps_proj)
        self.max_iter = int(max_iter)
        self.ball = None  # (center, radius) when built from the ball sugar

    @classmethod
    def from_ball(cls, center, radius: float, **kwargs) -> "ImplicitDomain":
        center = np.atleast_1d(np.asarray(center, dtype=float))
        radius = float(radius)
        if radius <= 0:
            raise GeometryError("radius must be positive")
        d = center.shape[0]
        terms = []
        for i, c in enumerate(center):
            if c == 0.0:
                terms.append(f"x{i + 1}^2")
            else:
                terms.append(f"(x{i + 1} - ({float(c)!r}))^2")
        g = parse(" + ".join(terms) + f" - {radius * radius!r}", d)
        pad = 1e-3 * radius
        bbox = np.column_stack([center - radius - pad, center + radius + pad])
        dom = cls(g, bbox, **kwargs)
        dom.ball = (center, radius)
        return dom

    @property
    def diameter(self) -> float:
        """Diagonal of the bounding box."""
        return float(np.linalg.norm(self.bbox[:, 1] - self.bbox[:, 0]))

    def __call__(self, x):
        return self.g(x)

    def contains(self, x):
        return self.g(x) < 0.0

    def in_bbox(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.bbox[:, 0]) and np.all(x <= self.bbox[:, 1]))

    def sample_box(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """``n`` uniform points in the bounding box, shape ``(d, n)``."""
        lo, hi = self.bbox[:, 0], self.bbox[:, 1]
        return lo[:, None] + (hi - lo)[:, None] * rng.random((self.dimension, n))

    def sample_interior(self, n: int, rng: np.random.Generator, max_rounds: int = 100) -> np.ndarray:
        """Rejection sample ``n`` points of Omega, shape ``(d, n)``."""
        found = []
        count = 0
        for _ in range(max_rounds):
            pts = self.sample_box(max(2 * n, 64), rng)
            keep = pts[:, self.contains(pts)]
            found.append(keep)
            count += keep.shape[1]
            if count >= n:
                break
        if count == 0:
            raise GeometryError("no interior points found in the bounding box")
        return np.concatenate(found, axis=1)[:, :n]

    # -- projection / frames ---------------------------------------------

    def project_to_boundary(self, x) -> np.ndarray:
        """Newton iteration on ``g`` along ``grad g`` starting from ``x``."""
        z = np.array(x, dtype=float).reshape(self.dimension)
        for _ in range(self.max_iter):
            gz = self.g(z)
            if abs(gz) <= self.eps_proj:
                return z
            dg = self.g.gradient(z)
            nrm2 = float(dg @ dg)
            if not np.isfinite(nrm2) or nrm2 < 1e-28:
                raise ProjectionError("vanishing gradient of g", z)
            z = z - (gz / nrm2) * dg
            if not np.all(np.isfinite(z)):
                raise ProjectionError("projection diverged", z)
        if abs(self.g(z)) <= self.eps_proj:
            return z
        raise ProjectionError(f"no convergence in {self.max_iter} iterations", z)

    def boundary_frame(self, z) -> BoundaryFrame:
        z = np.asarray(z, dtype=float).reshape(self.dimension)
        dg = self.g.gradient(z)
        nrm = float(np.linalg.norm(dg))
        if nrm < 1e-14:
            raise GeometryError(f"vanishing gradient of g at {z.tolist()}")
        n = dg / nrm
        s = 1e-6 * max(1.0, self.diameter)
        if self.g(z + s * n) <= self.g(z - s * n):
            n = -n
        return BoundaryFrame(point=z, normal=n, tangents=tangent_basis(n))

    def boundary_hessian(self, f: ScalarField, z, tol_crit: float = 1e-8):
        """Hessian of ``f`` restricted to the boundary at a critical point ``z``.

        Returns ``(H, mu, frame)`` where ``H`` is ``(d-1, d-1)`` in the frame's
        tangent basis and ``mu`` is the outward normal derivative of ``f``.
        """
        frame = self.boundary_frame(z)
        z = frame.point
        grad_f = f.gradient(z)
        mu = float(grad_f @ frame.normal)
        tangential = grad_f - mu * frame.normal
        if np.linalg.norm(tangential) > tol_crit * max(1.0, float(np.linalg.norm(grad_f))):
            raise NotCriticalError(
                f"tangential gradient {np.linalg.norm(tangential):.3e} exceeds tol_crit at {z.tolist()}"
            )
        T = frame.tangents
        dg_norm = float(np.linalg.norm(self.g.gradient(z)))
        # second fundamental form correction; mu/|grad g| is the Lagrange multiplier
        H = T @ f.hessian(z) @ T.T - (mu / dg_norm) * (T @ self.g.hessian(z) @ T.T)
        H = 0.5 * (H + H.T)
        return H, mu, frame

    def to_json(self) -> dict:
        if self.ball is not None:
            c, r = self.ball
            return {"type": "ball", "center": c.tolist(), "radius": r}
        return {"type": "implicit", "g": to_string(self.g.expression), "bbox": self.bbox.tolist()}


def tangent_basis(n) -> np.ndarray:
    """Orthonormal basis of ``n``'s orthogonal complement, shape ``(d-1, d)``.

    Gram-Schmidt on the canonical axes, skipping the axis most parallel to ``n``.
    """
    n = np.asarray(n, dtype=float)
    d = n.shape[0]
    skip = int(np.argmax(np.abs(n)))
    basis = []
    for k in range(d):
        if k == skip:
            continue
        v = np.zeros(d)
        v[k] = 1.0
        v -= (v @ n) * n
        for t in basis:
            v -= (v @ t) * t
        # second pass for orthogonality to machine precision
        v -= (v @ n) * n
        for t in basis:
            v -= (v @ t) * t
        v /= np.linalg.norm(v)
        basis.append(v)
    return np.array(basis).reshape(d - 1, d)


def domain_from_json(obj: dict, dimension: int) -> ImplicitDomain:
    kind = obj.get("type")
    if kind == "ball":
        center = obj["center"]
        if len(center) != dimension:
            raise GeometryError("ball center has wrong dimension")
        return ImplicitDomain.from_ball(center, obj["radius"])
    if kind == "implicit":
        bbox = obj["bbox"]
        if len(bbox) != dimension:
            raise GeometryError("bbox has wrong dimension")
        return ImplicitDomain(parse(obj["g"], dimension), bbox)
    raise GeometryError(f"unknown domain type {kind!r}")
