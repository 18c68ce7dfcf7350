"""TOML run configuration.

Sections: ``[generator]`` (with optional ``[generator.category_prevalence.<name>]``
tables), ``[cleaning]``, ``[models.linear]``, ``[models.neural]``,
``[models.boosted_trees]`` (keys ``seed``, ``validation_fraction`` and a
``hyperparameters`` table), ``[metrics]`` and ``[crossval]``. Unknown sections
or keys raise :class:`ConfigError`.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from .datagen import CategorySpec, ConfigError, GeneratorConfig
from .experiment import CrossvalConfig
from .metrics import MetricConfig
from .models.base import MODEL_KINDS, TrainConfig
from .prep import CleaningConfig

SECTIONS = ("generator", "cleaning", "models", "metrics", "crossval")


def default_model_configs() -> dict[str, TrainConfig]:
    return {kind: TrainConfig(kind) for kind in MODEL_KINDS}


@dataclass
class RunConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    cleaning: CleaningConfig = field(default_factory=CleaningConfig)
    models: dict = field(default_factory=default_model_configs)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    crossval: CrossvalConfig = field(default_factory=CrossvalConfig)

    def to_dict(self) -> dict:
        return {
            "generator": _plain(self.generator),
            "cleaning": _plain(self.cleaning),
            "models": {k: v.to_dict() for k, v in sorted(self.models.items())},
            "metrics": _plain(self.metrics),
            "crossval": _plain(self.crossval),
        }

    def digest(self) -> str:
        return config_digest(self.to_dict())


def config_digest(d: dict) -> str:
    blob = json.dumps(d, sort_keys=True, default=_json_default).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _json_default(o):
    if isinstance(o, (dt.date, dt.datetime)):
        return o.isoformat()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(type(o))


def _plain(obj) -> dict:
    d = dataclasses.asdict(obj)
    return json.loads(json.dumps(d, default=_json_default))


def _build(cls, section: str, values: dict):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"[{section}]: unknown keys {sorted(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc


def parse_config(raw: dict) -> RunConfig:
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")
    cfg = RunConfig()
    if "generator" in raw:
        gen = dict(raw["generator"])
        prevalence = gen.pop("category_prevalence", {})
        specs = {}
        for name, spec in prevalence.items():
            specs[name] = _build(CategorySpec, f"generator.category_prevalence.{name}", spec)
        cfg.generator = _build(GeneratorConfig, "generator", {**gen, "category_prevalence": specs})
        cfg.generator.validate()
    if "cleaning" in raw:
        cfg.cleaning = _build(CleaningConfig, "cleaning", raw["cleaning"])
    if "metrics" in raw:
        cfg.metrics = _build(MetricConfig, "metrics", raw["metrics"])
    if "crossval" in raw:
        cv = dict(raw["crossval"])
        if "models" in cv:
            cv["models"] = tuple(cv["models"])
        cfg.crossval = _build(CrossvalConfig, "crossval", cv)
    for kind, section in raw.get("models", {}).items():
        if kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model section [models.{kind}]")
        cfg.models[kind] = _build(TrainConfig, f"models.{kind}", {"model_kind": kind, **section})
        try:
            cfg.models[kind].params
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[models.{kind}.hyperparameters]: {exc}") from exc
    return cfg


def load_config(path=None) -> RunConfig:
    """Read a TOML file; ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    with open(Path(path), "rb") as fh:
        try:
            raw = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(raw)
