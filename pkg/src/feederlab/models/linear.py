"""Elastic-net linear regression by cyclic coordinate descent.

Minimises ``1/(2n) |y - b - Xw|^2 + a*r*|w|_1 + a*(1-r)/2 * |w|^2`` with
``a = penalty_strength`` and ``r = l1_ratio``. Features are used unscaled; the
intercept is not penalised.
"""

from __future__ import annotations

import numpy as np

from .base import LinearParams, TrainedModel

CHUNK = 250_000


def centered_moments(X, y):
    """Means plus the centred Gram matrix and cross-moment, each divided by n."""
    n = len(y)
    x_mean = X.mean(axis=0)
    y_mean = float(np.mean(y))
    gram = np.zeros((X.shape[1], X.shape[1]))
    cross = np.zeros(X.shape[1])
    for lo in range(0, n, CHUNK):
        xc = X[lo:lo + CHUNK] - x_mean
        gram += xc.T @ xc
        cross += xc.T @ (y[lo:lo + CHUNK] - y_mean)
    return x_mean, y_mean, gram / n, cross / n


def soft_threshold(z, t):
    return np.sign(z) * max(abs(z) - t, 0.0)


def coordinate_descent(gram, cross, alpha, l1_ratio, tol=1e-6, max_iter=10_000):
    """Returns (weights, sweeps, last max coefficient change)."""
    p = len(cross)
    w = np.zeros(p)
    q = np.zeros(p)  # gram @ w, kept in sync
    l1 = alpha * l1_ratio
    l2 = alpha * (1.0 - l1_ratio)
    max_change = np.inf
    sweep = 0
    for sweep in range(1, max_iter + 1):
        max_change = 0.0
        for j in range(p):
            if gram[j, j] <= 0.0:
                continue
            rho = cross[j] - q[j] + gram[j, j] * w[j]
            new = soft_threshold(rho, l1) / (gram[j, j] + l2)
            delta = new - w[j]
            if delta != 0.0:
                q += delta * gram[:, j]
                w[j] = new
                max_change = max(max_change, abs(delta))
        if max_change < tol:
            break
    return w, sweep, max_change


class LinearModel(TrainedModel):
    kind = "linear"

    def __init__(self, weights, intercept, config=None, training_log=None):
        super().__init__(config, training_log)
        self.weights = np.asarray(weights, dtype=float)
        self.intercept = float(intercept)

    def _predict(self, X):
        return X @ self.weights + self.intercept

    def state(self):
        return {"intercept": self.intercept}, {"weights": self.weights}

    @classmethod
    def from_state(cls, meta, arrays):
        return cls(arrays["weights"], meta["intercept"])


def fit_linear(X, y, params: LinearParams, config=None) -> LinearModel:
    x_mean, y_mean, gram, cross = centered_moments(X, np.asarray(y, dtype=float))
    w, sweeps, change = coordinate_descent(gram, cross, params.penalty_strength, params.l1_ratio,
                                           params.tol, params.max_iter)
    log = [{"sweeps": sweeps, "max_change": change, "converged": bool(change < params.tol)}]
    return LinearModel(w, y_mean - x_mean @ w, config, log)
