"""Single-hidden-layer tanh network trained with Adam on min-max scaled data."""

from __future__ import annotations

import numpy as np

from .base import DivergenceError, NeuralParams, TrainedModel

PARAM_NAMES = ("W1", "b1", "W2", "b2")


def init_params(n_in: int, n_hidden: int, rng: np.random.Generator) -> dict:
    """Glorot-uniform weights and biases."""
    b_in = np.sqrt(6.0 / (n_in + n_hidden))
    b_out = np.sqrt(6.0 / (n_hidden + 1))
    return {
        "W1": rng.uniform(-b_in, b_in, (n_in, n_hidden)),
        "b1": rng.uniform(-b_in, b_in, n_hidden),
        "W2": rng.uniform(-b_out, b_out, n_hidden),
        "b2": rng.uniform(-b_out, b_out, ()),
    }


def forward(params, X):
    hidden = np.tanh(X @ params["W1"] + params["b1"])
    return hidden @ params["W2"] + params["b2"], hidden


def mlp_forward_backward(params: dict, X, y):
    """Predictions, gradients of ``0.5 * mean((pred - y)^2)`` and the loss."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(X) == 0:
        raise ValueError("empty batch")
    pred, hidden = forward(params, X)
    err = pred - y
    loss = 0.5 * float(np.mean(err**2))
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite loss {loss}; max |pred| {np.max(np.abs(pred))}")
    d = err / len(y)
    dz = np.outer(d, params["W2"]) * (1.0 - hidden**2)
    grads = {
        "W1": X.T @ dz,
        "b1": dz.sum(axis=0),
        "W2": hidden.T @ d,
        "b2": np.asarray(d.sum()),
    }
    return pred, grads, loss


class Adam:
    def __init__(self, params: dict, lr, beta1, beta2, eps):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        lr_t = self.lr * np.sqrt(c2) / c1
        for k in PARAM_NAMES:
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] = params[k] - lr_t * m / (np.sqrt(v) + self.eps)


class MinMaxScaler:
    def __init__(self, low, high):
        self.low = np.asarray(low, dtype=float)
        span = np.asarray(high, dtype=float) - self.low
        self.span = np.where(span > 0, span, 1.0)

    @classmethod
    def fit(cls, a):
        return cls(a.min(axis=0), a.max(axis=0))

    def transform(self, a):
        return (a - self.low) / self.span

    def inverse(self, a):
        return a * self.span + self.low


class NeuralModel(TrainedModel):
    kind = "neural"

    def __init__(self, params, x_scaler: MinMaxScaler, y_scaler: MinMaxScaler, config=None, training_log=None):
        super().__init__(config, training_log)
        self.params = params
        self.x_scaler = x_scaler
        self.y_scaler = y_scaler

    def _predict(self, X):
        pred, _ = forward(self.params, self.x_scaler.transform(X))
        return self.y_scaler.inverse(pred)

    def state(self):
        arrays = {k: np.asarray(v) for k, v in self.params.items()}
        arrays.update(x_low=self.x_scaler.low, x_span=self.x_scaler.span,
                      y_low=self.y_scaler.low, y_span=self.y_scaler.span)
        return {}, arrays

    @classmethod
    def from_state(cls, meta, arrays):
        params = {k: np.array(arrays[k]) for k in PARAM_NAMES}
        xs = MinMaxScaler(arrays["x_low"], arrays["x_low"] + arrays["x_span"])
        ys = MinMaxScaler(arrays["y_low"], arrays["y_low"] + arrays["y_span"])
        return cls(params, xs, ys)


def fit_neural(X, y, params: NeuralParams, rng: np.random.Generator, X_val, y_val, config=None) -> NeuralModel:
    """Mini-batch Adam with early stopping on the validation loss.

    Scaling statistics come from the fitting rows only. Every ``check_every``
    batches (and at each epoch end) the validation loss is evaluated; after
    ``patience`` checks without improvement training stops and the best
    parameters are restored.
    """
    x_scaler = MinMaxScaler.fit(X)
    y_scaler = MinMaxScaler.fit(np.asarray(y, dtype=float)[:, None])
    Xs = x_scaler.transform(X)
    ys = y_scaler.transform(np.asarray(y, dtype=float)[:, None])[:, 0]
    Xv = x_scaler.transform(X_val)
    yv = y_scaler.transform(np.asarray(y_val, dtype=float)[:, None])[:, 0]

    weights = init_params(X.shape[1], params.hidden_sizes[0], rng)
    opt = Adam(weights, params.learning_rate, params.beta1, params.beta2, params.epsilon)
    best = {k: v.copy() for k, v in weights.items()}
    best_val = np.inf
    stale = 0
    step = 0
    log = []
    running = []
    n = len(ys)
    stop = False
    for epoch in range(1, params.max_epochs + 1):
        order = rng.permutation(n)
        n_batches = (n + params.batch_size - 1) // params.batch_size
        for b in range(n_batches):
            idx = order[b * params.batch_size:(b + 1) * params.batch_size]
            _, grads, loss = mlp_forward_backward(weights, Xs[idx], ys[idx])
            opt.step(weights, grads)
            running.append(loss)
            step += 1
            if step % params.check_every == 0 or b == n_batches - 1:
                pred_v, _ = forward(weights, Xv)
                val_loss = 0.5 * float(np.mean((pred_v - yv) ** 2))
                if not np.isfinite(val_loss):
                    raise DivergenceError(f"non-finite validation loss at step {step}")
                log.append({"epoch": epoch, "step": step, "train_loss": float(np.mean(running)),
                            "val_loss": val_loss})
                running = []
                # patience resets only on a significant improvement; the snapshot
                # always follows the lowest validation loss
                significant = val_loss < best_val * (1.0 - params.tol)
                if val_loss < best_val:
                    best_val = val_loss
                    best = {k: v.copy() for k, v in weights.items()}
                if significant:
                    stale = 0
                else:
                    stale += 1
                    if stale >= params.patience:
                        stop = True
                        break
        if stop:
            break
    return NeuralModel(best, x_scaler, y_scaler, config, log)
