import json
import math

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from kramers_exit.estimators import (
    EyringKramersEstimator,
    StationaryDensityShape,
    check_points,
    check_temperatures,
)
from kramers_exit.kramers import PrefactorError
from kramers_exit.problem import example_path


@pytest.fixture(scope="module")
def doc():
    return json.loads(example_path("disc_plus").read_text())


def test_params_and_clone(doc):
    est = EyringKramersEstimator(problem=doc, verify=False)
    assert est.get_params() == {"problem": doc, "verify": False}
    assert clone(est).get_params()["verify"] is False


def test_fit_predict(doc):
    est = EyringKramersEstimator(doc).fit()
    assert est.kappa0_ == pytest.approx(math.sqrt(math.pi / 2) / math.e, rel=1e-9)
    assert est.barrier_ == pytest.approx(0.5)
    assert est.n_features_in_ == 2
    assert est.predict(0.25)[()] == pytest.approx(12.58674, rel=1e-6)
    hs = np.array([0.2, 0.4])
    np.testing.assert_allclose(est.predict(hs) * est.predict_eigenvalue(hs), 1.0, rtol=1e-15)
    np.testing.assert_allclose(est.predict_log(hs), -est.predict_log_eigenvalue(hs), rtol=1e-15)


def test_fit_accepts_spec(disc_minus):
    assert EyringKramersEstimator(disc_minus).fit().kappa0_ == pytest.approx(math.sqrt(math.pi / 2) * math.e, rel=1e-8)


def test_unfitted_and_bad_input(doc):
    with pytest.raises(NotFittedError):
        EyringKramersEstimator(doc).predict(0.3)
    est = EyringKramersEstimator(doc).fit()
    with pytest.raises(ValueError):
        est.predict([0.1, -0.2])
    with pytest.raises(TypeError):
        EyringKramersEstimator("disc_plus").fit()


def test_failed_assumptions_block_fit():
    bad = json.loads(example_path("broken_orthogonality").read_text())
    with pytest.raises(PrefactorError):
        EyringKramersEstimator(bad).fit()


def test_density_shape_transform(doc):
    tr = StationaryDensityShape(doc)
    out = tr.fit_transform([[0.0, 0.0], [0.0, 0.5]])
    assert out.shape == (2, 1)
    assert out[0, 0] == pytest.approx(1 / math.pi, rel=1e-12)
    assert out[1, 0] > out[0, 0]  # I increases toward the saddle for ell+
    with pytest.raises(ValueError):
        tr.transform([[0.0, 0.0, 0.0]])


def test_validation_helpers():
    assert check_temperatures(0.5).shape == (1,)
    with pytest.raises(ValueError):
        check_temperatures([[0.1]])
    with pytest.raises(ValueError):
        check_points([[np.nan, 0.0]], 2)
    assert check_points([[1.0, 2.0]], 2).shape == (1, 2)
