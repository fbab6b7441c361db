import dataclasses
import math

import numpy as np
import pytest

from kramers_exit import load_example
from kramers_exit.geometry import ImplicitDomain
from kramers_exit.kramers import (
    PrefactorError,
    compute_prefactor,
    log_mean_exit_time,
    log_principal_eigenvalue,
    predict_mean_exit_time,
    predict_principal_eigenvalue,
)
from kramers_exit.wellspec import ProblemSpec

SQRT_HALF_PI = math.sqrt(math.pi / 2)


@pytest.fixture(scope="module")
def plus_report(disc_plus):
    return compute_prefactor(disc_plus)


def test_kappa0_worked_disc(plus_report, disc_minus, disc_gibbs):
    assert abs(plus_report.kappa0 - SQRT_HALF_PI / math.e) < 1e-10
    assert abs(compute_prefactor(disc_minus).kappa0 - SQRT_HALF_PI * math.e) < 1e-9
    gibbs = compute_prefactor(disc_gibbs)
    assert abs(gibbs.kappa0 - SQRT_HALF_PI) < 1e-12
    assert gibbs.saddles[0].non_gibbsian_factor == 1.0


def test_report_fields(plus_report):
    assert plus_report.barrier == pytest.approx(0.5, abs=1e-14)
    assert plus_report.det_hess_x0 == pytest.approx(1.0)
    assert 0 < plus_report.kappa0_error < 1e-8
    js = plus_report.to_json()
    assert js["saddles"][0]["divergence_integral"] == pytest.approx(1.0, abs=1e-8)
    assert js["saddles"][0]["det_boundary_hessian"] == pytest.approx(0.5)


def test_reciprocity(plus_report):
    assert plus_report.zeta0 == 1.0 / plus_report.kappa0
    assert plus_report.zeta0 * plus_report.kappa0 == pytest.approx(1.0, abs=2e-16)


def test_zeta0_gibbsian(disc_gibbs):
    assert compute_prefactor(disc_gibbs).zeta0 == pytest.approx(1 / SQRT_HALF_PI, rel=1e-13)


def test_mean_exit_time_at_quarter(plus_report):
    expected = SQRT_HALF_PI / math.e * 0.5 * math.exp(4.0)
    assert predict_mean_exit_time(plus_report, 0.25) == pytest.approx(expected, rel=1e-10)
    assert predict_principal_eigenvalue(plus_report, 0.25) == pytest.approx(1 / expected, rel=1e-10)


@pytest.mark.parametrize("h", [0.01, 0.05, 0.25, 1.0, 7.5])
def test_prediction_product_is_one(plus_report, h):
    prod = predict_mean_exit_time(plus_report, h) * predict_principal_eigenvalue(plus_report, h)
    assert abs(prod - 1.0) < 4e-16


def test_doubling_kappa_doubles_prediction(plus_report):
    doubled = dataclasses.replace(plus_report, kappa0=2 * plus_report.kappa0)
    assert predict_mean_exit_time(doubled, 0.3) == 2 * predict_mean_exit_time(plus_report, 0.3)


def test_log_space_survives_tiny_h(plus_report):
    h = 1e-3
    assert predict_mean_exit_time(plus_report, h) == math.inf
    lg = log_mean_exit_time(plus_report, h)
    assert math.isfinite(lg)
    assert lg == pytest.approx(math.log(plus_report.kappa0) + 0.5 * math.log(h) + 1.0 / h)
    assert log_principal_eigenvalue(plus_report, h) == pytest.approx(-lg)


def test_array_temperatures(plus_report):
    hs = np.array([0.1, 0.2, 0.4])
    out = predict_mean_exit_time(plus_report, hs)
    assert out.shape == (3,)
    assert np.all(np.diff(out) < 0)


def test_nonpositive_temperature_rejected(plus_report):
    with pytest.raises(ValueError):
        predict_mean_exit_time(plus_report, 0.0)
    with pytest.raises(ValueError):
        predict_principal_eigenvalue(plus_report, -1.0)


def test_shift_invariance_bit_for_bit(disc_plus, plus_report):
    shifted = ProblemSpec.from_strings(
        "0.5*(x1^2 + x2^2) + 3.7", ["x1*x2", "-x1^2"], disc_plus.domain, [0.0, 0.0]
    )
    other = compute_prefactor(shifted)
    assert other.kappa0 == plus_report.kappa0
    assert other.zeta0 == plus_report.zeta0
    assert other.barrier == plus_report.barrier
    for h in (0.2, 0.5):
        assert predict_mean_exit_time(other, h) == predict_mean_exit_time(plus_report, h)


def test_gibbsian_reduction_matches_classical_prefactor(disc_gibbs, ellipse):
    for spec in (disc_gibbs, ellipse):
        rep = compute_prefactor(spec)
        det0 = float(np.linalg.det(spec.minimum.hessian))
        inv = sum(s.mu / math.sqrt(s.det_hessian) * math.sqrt(det0) / math.sqrt(math.pi) for s in spec.saddle_set)
        assert all(s.integral.value == 0.0 for s in rep.saddles)
        assert abs(rep.kappa0 - 1 / inv) < 1e-12


def test_two_symmetric_saddles_halve_kappa(ellipse):
    rep = compute_prefactor(ellipse)
    single = math.sqrt(math.pi) * math.sqrt(0.75)  # one saddle with mu = 1, det H = 3/4
    assert len(rep.saddles) == 2
    assert rep.saddles[0].weight == pytest.approx(rep.saddles[1].weight, rel=1e-12)
    assert rep.kappa0 == pytest.approx(single / 2, rel=1e-12)


def test_asymmetric_saddles_weight_by_divergence_factor():
    dom = ImplicitDomain("x1^2/4 + x2^2 - 1", [[-2.1, 2.1], [-1.1, 1.1]])
    spec = ProblemSpec.from_strings("0.5*(x1^2 + x2^2)", ["x1*x2", "-x1^2"], dom, [0.0, 0.0])
    rep = compute_prefactor(spec)
    by_height = sorted(rep.saddles, key=lambda s: s.z[1])
    assert by_height[0].integral.value == pytest.approx(-1.0, abs=1e-8)
    assert by_height[1].integral.value == pytest.approx(1.0, abs=1e-8)
    expected = math.sqrt(math.pi) * math.sqrt(0.75) / (math.e + 1 / math.e)
    assert rep.kappa0 == pytest.approx(expected, rel=1e-9)


def test_failed_assumptions_block_prefactor():
    with pytest.raises(PrefactorError, match="A_perp"):
        compute_prefactor(load_example("broken_orthogonality"))


def test_interval_prefactor(interval):
    assert compute_prefactor(interval).kappa0 == pytest.approx(math.sqrt(math.pi), rel=1e-14)
