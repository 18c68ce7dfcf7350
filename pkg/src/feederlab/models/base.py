"""Train/predict contract shared by the three model families."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..domain import N_FEATURES, FeatureRow

MODEL_KINDS = ("linear", "neural", "boosted_trees")
FORMAT_VERSION = 1


class InsufficientData(ValueError):
    pass


class DataError(ValueError):
    pass


class ShapeError(ValueError):
    pass


class DivergenceError(RuntimeError):
    pass


@dataclass
class LinearParams:
    penalty_strength: float = 1.0
    l1_ratio: float = 0.5
    tol: float = 1e-6
    max_iter: int = 10_000


@dataclass
class NeuralParams:
    hidden_sizes: tuple = (20,)
    activation: str = "tanh"
    learning_rate: float = 1e-3
    batch_size: int = 256
    patience: int = 10
    check_every: int = 1000  # mini-batches between validation checks
    max_epochs: int = 50
    tol: float = 1e-4  # relative validation improvement that resets patience
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        self.hidden_sizes = tuple(self.hidden_sizes)
        if len(self.hidden_sizes) != 1 or self.activation != "tanh":
            raise ValueError("only a single tanh hidden layer is supported")


@dataclass
class BoostedTreesParams:
    n_estimators: int = 1500
    learning_rate: float = 0.05
    subsample: float = 0.7
    colsample_bylevel: float = 0.5
    early_stopping_rounds: int = 30
    max_depth: int = 6
    min_samples_leaf: int = 1
    base_score: float | None = None  # None: mean of the training targets

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if not 0 < self.subsample <= 1 or not 0 < self.colsample_bylevel <= 1:
            raise ValueError("subsample and colsample_bylevel must lie in (0, 1]")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")


PARAM_TYPES = {"linear": LinearParams, "neural": NeuralParams, "boosted_trees": BoostedTreesParams}


@dataclass
class TrainConfig:
    model_kind: str
    seed: int = 0
    validation_fraction: float = 0.125
    hyperparameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.model_kind!r}; expected one of {MODEL_KINDS}")
        if not 0 < self.validation_fraction < 0.5:
            raise ValueError("validation_fraction must lie in (0, 0.5)")
        known = {f.name for f in fields(PARAM_TYPES[self.model_kind])}
        unknown = set(self.hyperparameters) - known
        if unknown:
            raise ValueError(f"unknown {self.model_kind} hyperparameters {sorted(unknown)}")

    @property
    def params(self):
        return PARAM_TYPES[self.model_kind](**self.hyperparameters)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hyperparameters"] = asdict(self.params)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def as_matrix(features) -> np.ndarray:
    """Accept an (n, 33) array or a sequence of FeatureRow."""
    if isinstance(features, np.ndarray):
        X = features
    else:
        features = list(features)
        if features and isinstance(features[0], FeatureRow):
            X = np.array([f.as_array() for f in features])
        else:
            X = np.asarray(features, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != N_FEATURES:
        raise ShapeError(f"features must have shape (n, {N_FEATURES}), got {X.shape}")
    return X


def check_finite(X, y=None):
    if not np.isfinite(X).all():
        raise DataError("non-finite feature value")
    if y is not None and not np.isfinite(y).all():
        raise DataError("non-finite target value")


class TrainedModel:
    """A fitted model; ``predict`` is pure once training returns."""

    kind: str = ""

    def __init__(self, config: TrainConfig | None = None, training_log: list | None = None):
        self.config = config
        self.training_log = training_log or []

    def _predict(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict(self, features) -> np.ndarray:
        X = as_matrix(features)
        check_finite(X)
        return self._predict(X)

    # persistence: subclasses return json-able metadata and named arrays
    def state(self) -> tuple[dict, dict]:
        raise NotImplementedError

    @classmethod
    def from_state(cls, meta: dict, arrays: dict) -> "TrainedModel":
        raise NotImplementedError


def split_validation(feeder_ids, fraction: float, rng: np.random.Generator) -> tuple[list, list]:
    """Feeder-disjoint (fit, validation) split; at least one feeder on each side."""
    ids = sorted(feeder_ids)
    if len(ids) < 2:
        raise InsufficientData(f"need at least 2 feeders, got {len(ids)}")
    n_val = min(max(1, int(round(fraction * len(ids)))), len(ids) - 1)
    perm = rng.permutation(len(ids))
    val = sorted(ids[k] for k in perm[:n_val])
    fit = sorted(ids[k] for k in perm[n_val:])
    return fit, val
