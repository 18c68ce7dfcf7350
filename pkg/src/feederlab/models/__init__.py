"""Model families behind one train/predict contract.

``train`` takes a :class:`~feederlab.prep.SampleTable`. The neural network
and the boosted trees hold out a feeder-disjoint validation share of the
training feeders for early stopping; the linear model fits on everything.
"""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np

from .base import (
    FORMAT_VERSION,
    MODEL_KINDS,
    BoostedTreesParams,
    DataError,
    DivergenceError,
    InsufficientData,
    LinearParams,
    NeuralParams,
    ShapeError,
    TrainConfig,
    TrainedModel,
    as_matrix,
    check_finite,
    split_validation,
)
from .linear import LinearModel, fit_linear
from .neural import NeuralModel, fit_neural, mlp_forward_backward
from .trees import BoostedTreesModel, RegressionTree, fit_boosted_trees, gbt_fit_round

MODEL_CLASSES = {"linear": LinearModel, "neural": NeuralModel, "boosted_trees": BoostedTreesModel}


def train(samples, config: TrainConfig) -> TrainedModel:
    feeders = samples.feeders()
    if len(feeders) < 2:
        raise InsufficientData(f"training needs samples from at least 2 feeders, got {len(feeders)}")
    check_finite(samples.X, samples.y)
    rng = np.random.default_rng(config.seed)
    params = config.params
    if config.model_kind == "linear":
        return fit_linear(samples.X, samples.y, params, config)
    fit_ids, val_ids = split_validation(feeders, config.validation_fraction, rng)
    is_val = np.isin(samples.feeder_ids, val_ids)
    X, y = samples.X[~is_val], samples.y[~is_val]
    X_val, y_val = samples.X[is_val], samples.y[is_val]
    if config.model_kind == "neural":
        model = fit_neural(X, y, params, rng, X_val, y_val, config)
    else:
        model = fit_boosted_trees(X, y, params, rng, X_val, y_val, config)
    model.validation_feeders = val_ids
    return model


def predict(model: TrainedModel, features) -> np.ndarray:
    return model.predict(features)


def save_model(model: TrainedModel, path) -> None:
    """Versioned ``.npz`` archive: parameter arrays plus a JSON header."""
    meta, arrays = model.state()
    header = {
        "format_version": FORMAT_VERSION,
        "model_kind": model.kind,
        "state": meta,
        "config": model.config.to_dict() if model.config else None,
        "config_digest": model.config.digest() if model.config else None,
        "training_log": model.training_log,
    }
    buf = io.BytesIO()
    np.savez(buf, __header__=np.array(json.dumps(header, default=_json_default)), **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_model(path) -> TrainedModel:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["__header__"]))
        arrays = {k: data[k] for k in data.files if k != "__header__"}
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format {header.get('format_version')}")
    model = MODEL_CLASSES[header["model_kind"]].from_state(header["state"], arrays)
    if header.get("config"):
        model.config = TrainConfig(**header["config"])
    model.training_log = header.get("training_log", [])
    return model


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, (np.ndarray, tuple)):
        return list(o)
    raise TypeError(type(o))


__all__ = [
    "MODEL_KINDS",
    "BoostedTreesModel",
    "BoostedTreesParams",
    "DataError",
    "DivergenceError",
    "InsufficientData",
    "LinearModel",
    "LinearParams",
    "NeuralModel",
    "NeuralParams",
    "RegressionTree",
    "ShapeError",
    "TrainConfig",
    "TrainedModel",
    "as_matrix",
    "gbt_fit_round",
    "load_model",
    "mlp_forward_backward",
    "predict",
    "save_model",
    "train",
]
