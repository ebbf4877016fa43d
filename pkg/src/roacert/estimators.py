"""scikit-learn compatible wrapper around the ReLU network trainer."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .relu_net import ReluNetwork, TrainConfig, anchor_at_origin, forward, train


class ReluApproximator(RegressorMixin, BaseEstimator):
    """Fit a ReLU network to ``(x, f(x) - A x)`` samples.

    With ``anchor=True`` the output bias is shifted so the fitted map vanishes
    at the origin, keeping the origin an equilibrium of the uncertain system.
    """

    def __init__(self, hidden=(16, 16), epochs=500, learning_rate=3e-3, l1=1e-4, batch_size=256,
                 refine_epochs=0, refine_power=8.0, refine_learning_rate=3e-3, refine_batch_size=1024,
                 anchor=True, seed=0):
        self.hidden = hidden
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.l1 = l1
        self.batch_size = batch_size
        self.refine_epochs = refine_epochs
        self.refine_power = refine_power
        self.refine_learning_rate = refine_learning_rate
        self.refine_batch_size = refine_batch_size
        self.anchor = anchor
        self.seed = seed

    def _config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, learning_rate=self.learning_rate, l1=self.l1,
                           batch_size=self.batch_size, seed=self.seed, refine_epochs=self.refine_epochs,
                           refine_power=self.refine_power, refine_learning_rate=self.refine_learning_rate,
                           refine_batch_size=self.refine_batch_size)

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True, dtype=float)
        Y = y.reshape(len(y), -1)
        result = train(X, Y, list(self.hidden), self._config())
        net = result.network
        self.network_ = anchor_at_origin(net) if self.anchor else net
        self.history_ = result.history
        self.refine_history_ = result.refine_history
        self.n_features_in_ = X.shape[1]
        self.n_outputs_ = Y.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        out = forward(self.network_, X)
        return out[:, 0] if self.n_outputs_ == 1 else out

    def max_error(self, X, y) -> float:
        """Largest l-inf residual over the given samples."""
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True, dtype=float)
        r = self.predict(X).reshape(len(X), -1) - y.reshape(len(y), -1)
        return float(np.abs(r).max())

    @classmethod
    def from_network(cls, net: ReluNetwork, **params) -> "ReluApproximator":
        est = cls(hidden=tuple(net.hidden_sizes), **params)
        est.network_ = net
        est.history_ = []
        est.refine_history_ = []
        est.n_features_in_ = net.input_dim
        est.n_outputs_ = net.output_dim
        return est
