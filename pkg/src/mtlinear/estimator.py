"""Scikit-learn style front end for the multi-head linear forecaster."""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .data import SeriesFrame
from .trainer import TrainConfig, train
from .validation import as_float_matrix


class MTLinearForecaster(BaseEstimator):
    """Multivariate forecaster with correlation-grouped linear heads.

    Variates are clustered by absolute Pearson correlation under the angle
    threshold alpha_bar; each cluster gets its own linear head (variant
    linear / nlinear / dlinear / rlinear) trained with an error-scaled
    weighted MSE and analytic gradients.

    Parameters mirror TrainConfig; `penalty_exponent` is the error-weighting
    intensity (0 disables the penalty). fit() takes the raw series as a
    (T, k) array and splits it chronologically by the given fractions.
    """

    def __init__(self, variant="nlinear", lookback=96, horizon=96,
                 alpha_bar=math.pi / 2, penalty_exponent=1, lr=0.01,
                 batch_size=32, max_epochs=20, patience=3, optimizer="adam",
                 normalize=True, use_bias=True, ma_kernel=25,
                 train_frac=0.7, val_frac=0.1, seed=0, jobs=1):
        self.variant = variant
        self.lookback = lookback
        self.horizon = horizon
        self.alpha_bar = alpha_bar
        self.penalty_exponent = penalty_exponent
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.optimizer = optimizer
        self.normalize = normalize
        self.use_bias = use_bias
        self.ma_kernel = ma_kernel
        self.train_frac = train_frac
        self.val_frac = val_frac
        self.seed = seed
        self.jobs = jobs

    def _config(self) -> TrainConfig:
        return TrainConfig(
            variant=self.variant, lookback=self.lookback, horizon=self.horizon,
            alpha_bar=self.alpha_bar, a=self.penalty_exponent, lr=self.lr,
            batch_size=self.batch_size, max_epochs=self.max_epochs,
            patience=self.patience, optimizer=self.optimizer,
            normalize=self.normalize, use_bias=self.use_bias,
            ma_kernel=self.ma_kernel, seed=self.seed, jobs=self.jobs,
        )

    def fit(self, X, y=None):
        """Train on a full series X of shape (T, k); y is ignored."""
        values = as_float_matrix(X, "X", ndim=2)
        T = values.shape[0]
        train_end = int(T * self.train_frac)
        val_end = train_end + int(T * self.val_frac)
        frame = SeriesFrame(
            values=values,
            variate_names=tuple(f"v{i}" for i in range(values.shape[1])),
            timestamps=(),
            train_end=train_end, val_end=val_end, test_end=T,
        )
        result = train(frame, self._config())
        self.ensemble_ = result.ensemble
        self.normalizer_ = result.normalizer
        self.grouping_ = result.grouping
        self.similarity_ = result.similarity
        self.history_ = result.log
        return self

    def _check_fitted(self):
        if not hasattr(self, "ensemble_"):
            raise NotFittedError("fit() must be called before predict()/score()")

    def predict(self, X):
        """Forecast horizons for lookback windows.

        X is one window (l, k) or a batch (n, l, k) in the original data
        scale; predictions come back in the same scale.
        """
        self._check_fitted()
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 2
        batch = X[None] if single else X
        if self.normalizer_ is not None:
            batch = self.normalizer_.transform(batch)
        pred = self.ensemble_.predict_batch(batch)
        if self.normalizer_ is not None:
            pred = self.normalizer_.inverse_transform(pred)
        return pred[0] if single else pred

    def score(self, X, y):
        """Negative MSE of predict(X) against targets y (sklearn convention)."""
        pred = self.predict(X)
        y = np.asarray(y, dtype=np.float64)
        if pred.shape != y.shape:
            raise ValueError(f"targets shape {y.shape} does not match "
                             f"predictions {pred.shape}")
        return -float(np.mean((pred - y) ** 2))
