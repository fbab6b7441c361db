import math

import numpy as np
import pytest

from kramers_exit.expr import ScalarField
from kramers_exit.geometry import (
    GeometryError,
    ImplicitDomain,
    NotCriticalError,
    ProjectionError,
    domain_from_json,
    tangent_basis,
)

HALF_NORM = ScalarField.parse("0.5*(x1^2 + x2^2)", 2)


@pytest.fixture
def disc():
    return ImplicitDomain.from_ball([0.0, -1.0], 2.0)


def _arc_second_derivative(f, gamma, dgamma, theta, step=1e-3):
    """d^2 (f o gamma) / ds^2 at a tangential critical point, by Richardson-extrapolated differences.

    At such a point d(f o gamma)/dtheta = 0, so d^2/ds^2 = (d^2/dtheta^2) / |gamma'|^2.
    """

    def second(hs):
        return (f(gamma(theta + hs)) - 2 * f(gamma(theta)) + f(gamma(theta - hs))) / hs**2

    d2 = (4 * second(step / 2) - second(step)) / 3
    return d2 / float(np.dot(dgamma(theta), dgamma(theta)))


def test_projection_radial(disc):
    z = disc.project_to_boundary([0.0, 1.5])
    assert np.allclose(z, [0.0, 1.0], atol=1e-12)
    assert abs(disc.g(z)) <= disc.eps_proj


def test_projection_fixed_point(disc):
    z = disc.project_to_boundary([0.0, 1.0])
    assert np.array_equal(z, [0.0, 1.0])


def test_projection_from_center_fails(disc):
    with pytest.raises(ProjectionError) as info:
        disc.project_to_boundary([0.0, -1.0])
    assert info.value.last.tolist() == [0.0, -1.0]


def test_frame_on_disc(disc):
    fr = disc.boundary_frame([0.0, 1.0])
    assert np.allclose(fr.normal, [0.0, 1.0])
    assert np.allclose(np.abs(fr.tangents), [[1.0, 0.0]])


def test_frame_on_sphere():
    sphere = ImplicitDomain("x1^2 + x2^2 + x3^2 - 1", [[-1.1, 1.1]] * 3)
    fr = sphere.boundary_frame([0.0, 0.0, 1.0])
    assert np.allclose(fr.normal, [0.0, 0.0, 1.0])
    assert fr.tangents.shape == (2, 3)


def test_frame_invariants_at_random_projected_points(disc):
    rng = np.random.default_rng(3)
    checked = 0
    for x in disc.sample_box(60, rng).T:
        try:
            z = disc.project_to_boundary(x)
        except ProjectionError:
            continue
        fr = disc.boundary_frame(z)
        n, T = fr.normal, fr.tangents
        assert abs(np.linalg.norm(n) - 1) < 1e-12
        assert np.all(np.abs(T @ n) < 1e-12)
        assert np.allclose(T @ T.T, np.eye(1), atol=1e-12)
        eps = 1e-6
        assert disc.g(z + eps * n) > 0 > disc.g(z - eps * n)
        checked += 1
    assert checked >= 50


def test_outward_normal_for_flipped_level_set():
    # g written with a reversed sign inside the parentheses still gives Omega = {g < 0}
    dom = ImplicitDomain("-(1 - x1^2 - x2^2)", [[-1.1, 1.1]] * 2)
    fr = dom.boundary_frame([1.0, 0.0])
    assert np.allclose(fr.normal, [1.0, 0.0])


def test_tangent_basis_orthonormal_in_higher_dimension():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = rng.normal(size=5)
        n /= np.linalg.norm(n)
        T = tangent_basis(n)
        assert np.allclose(T @ T.T, np.eye(4), atol=1e-12)
        assert np.all(np.abs(T @ n) < 1e-12)


def test_boundary_hessian_disc_matches_arc_length_oracle(disc):
    H, mu, _ = disc.boundary_hessian(HALF_NORM, [0.0, 1.0])
    # f on the circle c + r(sin t, cos t) is (5 - 4 cos t)/2, so d2f/ds2 = cos(t)/2
    assert H.shape == (1, 1)
    assert abs(H[0, 0] - 0.5) < 1e-12
    assert abs(np.linalg.det(H) - 0.5) < 1e-10
    assert mu == pytest.approx(1.0, abs=1e-14)
    oracle = _arc_second_derivative(
        lambda p: 0.5 * (p[0] ** 2 + p[1] ** 2),
        lambda t: np.array([2 * math.sin(t), -1 + 2 * math.cos(t)]),
        lambda t: np.array([2 * math.cos(t), -2 * math.sin(t)]),
        0.0,
    )
    assert abs(H[0, 0] - oracle) < 1e-8


@pytest.mark.parametrize("theta", [0.0, math.pi])
def test_boundary_hessian_ellipse_matches_arc_length_oracle(theta):
    dom = ImplicitDomain("x1^2/4 + x2^2 - 1", [[-2.1, 2.1], [-1.1, 1.1]])
    z = np.array([2 * math.sin(theta), math.cos(theta)])
    H, mu, _ = dom.boundary_hessian(HALF_NORM, z)
    oracle = _arc_second_derivative(
        lambda p: 0.5 * (p[0] ** 2 + p[1] ** 2),
        lambda t: np.array([2 * math.sin(t), math.cos(t)]),
        lambda t: np.array([2 * math.cos(t), -math.sin(t)]),
        theta,
    )
    assert abs(H[0, 0] - 0.75) < 1e-12
    assert abs(H[0, 0] - oracle) < 1e-8
    assert mu == pytest.approx(1.0)


def test_boundary_hessian_is_exactly_symmetric():
    dom = ImplicitDomain("x1^2 + 2*x2^2 + 3*x3^2 + x1*x2 - 1", [[-1.5, 1.5]] * 3)
    f = ScalarField.parse("x3 + 0.3*x1^2 + x1*x2", 3)
    # the lowest point along x3 is a tangential critical point of f = x3 + ...
    z = dom.project_to_boundary([0.0, 0.0, -1.0])
    try:
        H, _, _ = dom.boundary_hessian(f, z, tol_crit=1e-6)
    except NotCriticalError:
        pytest.skip("not a critical point for this f")
    assert np.array_equal(H, H.T)


def test_unit_disc_centered_gives_degenerate_hessian():
    dom = ImplicitDomain.from_ball([0.0, 0.0], 1.0)
    for t in np.linspace(0, 2 * math.pi, 7):
        H, _, _ = dom.boundary_hessian(HALF_NORM, [math.cos(t), math.sin(t)])
        assert abs(H[0, 0]) < 1e-12


def test_boundary_hessian_refuses_non_critical_points(disc):
    z = disc.project_to_boundary([1.0, 0.5])
    with pytest.raises(NotCriticalError):
        disc.boundary_hessian(HALF_NORM, z)


def test_one_dimensional_hessian_is_empty_with_unit_det():
    dom = ImplicitDomain("(x1 + 1)*(x1 - 2)", [[-1.5, 2.5]])
    f = ScalarField.parse("x1^2/2", 1)
    H, mu, frame = dom.boundary_hessian(f, [-1.0])
    assert H.shape == (0, 0)
    assert np.linalg.det(H) == 1.0
    assert mu == 1.0
    assert frame.normal.tolist() == [-1.0]


def test_domain_json_round_trip(disc):
    assert disc.to_json() == {"type": "ball", "center": [0.0, -1.0], "radius": 2.0}
    again = domain_from_json(disc.to_json(), 2)
    assert again.g([0.3, 0.2]) == disc.g([0.3, 0.2])
    with pytest.raises(GeometryError):
        domain_from_json({"type": "torus"}, 2)
    with pytest.raises(GeometryError):
        ImplicitDomain("x1^2 - 1", [[1.0, -1.0]])
