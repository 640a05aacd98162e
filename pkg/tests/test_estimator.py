import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mtlinear import MTLinearForecaster
from conftest import sinusoid_series


@pytest.fixture
def series():
    return sinusoid_series(T=300, k=3, n_freq=3, seed=11)


def small_forecaster(**kw):
    params = dict(variant="linear", lookback=6, horizon=2, max_epochs=2, seed=0)
    params.update(kw)
    return MTLinearForecaster(**params)


class TestSklearnProtocol:
    def test_get_set_params_round_trip(self):
        est = small_forecaster(alpha_bar=0.5, penalty_exponent=2)
        params = est.get_params()
        assert params["alpha_bar"] == 0.5
        assert params["penalty_exponent"] == 2
        est.set_params(lr=0.123)
        assert est.get_params()["lr"] == 0.123

    def test_clone(self, series):
        est = small_forecaster().fit(series)
        fresh = clone(est)
        assert not hasattr(fresh, "ensemble_")
        assert fresh.get_params() == est.get_params()

    def test_not_fitted_error(self):
        with pytest.raises(NotFittedError):
            small_forecaster().predict(np.zeros((6, 3)))

    def test_fit_returns_self(self, series):
        est = small_forecaster()
        assert est.fit(series) is est


class TestFitPredict:
    def test_predict_shapes(self, series):
        est = small_forecaster().fit(series)
        single = est.predict(series[-6:])
        assert single.shape == (2, 3)
        batch = est.predict(np.stack([series[-6:], series[-12:-6]]))
        assert batch.shape == (2, 2, 3)

    def test_predictions_in_original_scale(self):
        # scale one variate by 1000: normalized-space predictions must come
        # back in data units
        series = sinusoid_series(T=300, k=2, n_freq=3, seed=12)
        series[:, 1] *= 1000.0
        est = small_forecaster(max_epochs=30).fit(series)
        pred = est.predict(series[-6:])
        assert np.abs(pred[:, 1]).max() > 50.0

    def test_accurate_on_planted_series(self):
        # per-variate heads: each variate's future is an exact linear map of
        # its own lookback, but the maps differ across variates
        series = sinusoid_series(T=400, k=2, n_freq=3, seed=13)
        est = small_forecaster(lookback=6, horizon=2, max_epochs=150,
                               patience=150, alpha_bar=0.0).fit(series)
        score = est.score(np.stack([series[i:i + 6] for i in range(360, 380)]),
                          np.stack([series[i + 6:i + 8] for i in range(360, 380)]))
        assert score > -1e-3  # negative MSE near zero

    def test_grouping_attribute(self, series):
        est = small_forecaster(alpha_bar=0.0).fit(series)
        assert est.grouping_.n_clusters == 3
        assert len(est.ensemble_.heads) == 3

    def test_invalid_input_rejected(self):
        est = small_forecaster()
        with pytest.raises(ValueError):
            est.fit(np.full((100, 2), np.nan))
        with pytest.raises(ValueError):
            est.fit(np.zeros(100))

    def test_score_shape_mismatch(self, series):
        est = small_forecaster().fit(series)
        with pytest.raises(ValueError):
            est.score(series[-6:], np.zeros((3, 3)))

    def test_determinism(self, series):
        a = small_forecaster().fit(series)
        b = small_forecaster().fit(series)
        x = series[-6:]
        np.testing.assert_array_equal(a.predict(x), b.predict(x))
