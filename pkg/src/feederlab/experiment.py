"""Feeder-wise k-fold cross-validation over the model kinds.

Each (model kind, fold) pair is one sub-experiment: train on the samples of
the fold's training feeders, predict every grid step of its test feeders and
score them. Sub-experiments are independent; with ``workers > 1`` they run
in forked processes and are merged back in a fixed order, so the written
reports do not depend on the worker count.

Run directory layout::

    manifest.json            config, plan, seeds, per-sub-experiment provenance
    timings.json             wall-clock seconds (kept out of the manifest)
    models/<kind>_fold<f>.npz
    logs/<kind>_fold<f>.json
    estimates/<kind>.csv     feeder_id,timestamp,fold,estimate_kw
    per_feeder_metrics.csv   model,fold,feeder_id,metric,value,reason
    combined_table.csv       model,metric,statistic,value   (feeders pooled)
    per_fold_table.csv       model,metric,fold,count,value  (fold means, then mean/std)
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import multiprocessing as mp
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
import pandas as pd

from .datagen import ConfigError
from .domain import TimeGrid
from .io import Dataset, format_timestamps, read_dataset
from .metrics import METRIC_NAMES, STATISTICS, FeederMetrics, MetricConfig, MetricReport, aggregate_report, \
    evaluate_feeder, format_value
from .models import MODEL_KINDS, TrainConfig, TrainedModel, save_model, train
from .prep import SampleTable, build_samples, feature_matrix, time_features

MANIFEST_VERSION = 1


@dataclass
class CrossvalConfig:
    k: int = 5
    seed: int = 0
    models: tuple = MODEL_KINDS
    workers: int = 1

    def __post_init__(self):
        self.models = tuple(self.models)
        unknown = set(self.models) - set(MODEL_KINDS)
        if unknown:
            raise ConfigError(f"unknown model kinds {sorted(unknown)}")
        if self.k < 2:
            raise ConfigError("k must be >= 2")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


@dataclass(frozen=True)
class FoldPlan:
    seed: int
    k: int
    folds: tuple  # ((train ids, test ids), ...) with sorted id tuples

    def train_ids(self, fold: int) -> tuple:
        return self.folds[fold][0]

    def test_ids(self, fold: int) -> tuple:
        return self.folds[fold][1]

    def test_fold(self) -> dict[str, int]:
        return {fid: f for f, (_, test) in enumerate(self.folds) for fid in test}

    def to_dict(self) -> dict:
        return {"seed": self.seed, "k": self.k,
                "folds": [{"train": list(tr), "test": list(te)} for tr, te in self.folds]}

    @classmethod
    def from_dict(cls, d) -> "FoldPlan":
        return cls(d["seed"], d["k"], tuple((tuple(f["train"]), tuple(f["test"])) for f in d["folds"]))


def plan_folds(feeder_ids, k: int = 5, seed: int = 0) -> FoldPlan:
    """Permute the feeders by ``seed`` and cut k near-equal test blocks; the
    first ``n mod k`` blocks hold one extra feeder."""
    ids = sorted(set(feeder_ids))
    if k < 2:
        raise ConfigError("k must be >= 2")
    if k > len(ids):
        raise ConfigError(f"k = {k} exceeds the number of feeders ({len(ids)})")
    order = np.random.default_rng(seed).permutation(len(ids))
    blocks = np.array_split(order, k)
    folds = []
    for block in blocks:
        test = set(ids[i] for i in block)
        folds.append((tuple(i for i in ids if i not in test), tuple(sorted(test))))
    return FoldPlan(seed, k, tuple(folds))


# --- sub-experiments ----------------------------------------------------------

Trainer = Callable[[SampleTable, TrainConfig], object]
Predictor = Callable[[object, str, np.ndarray], np.ndarray]


def default_predictor(model, feeder_id: str, X: np.ndarray) -> np.ndarray:
    return model.predict(X)


def subexperiment_seed(cv_seed: int, model_seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([cv_seed, model_seed, fold]).generate_state(1)[0])


@dataclass
class SubResult:
    model_kind: str
    fold: int
    seed: int
    model: object
    training_log: list
    feeder_metrics: list  # FeederMetrics of the test feeders
    estimates: dict  # feeder id -> estimate at every grid index
    train_feeders: tuple
    validation_feeders: tuple
    n_train_rows: int
    test_touches: int  # test-feeder samples seen by the trainer; must be 0
    seconds: float = 0.0


def _provenance(table: SampleTable, test_ids) -> int:
    return int(np.isin(table.feeder_ids, list(test_ids)).sum())


@dataclass
class _Context:
    dataset: Dataset
    samples: SampleTable
    time_block: np.ndarray
    plan: FoldPlan
    model_configs: dict
    metric_config: MetricConfig
    cv_seed: int
    trainers: dict
    predictor: Predictor


_CTX: _Context | None = None  # inherited by forked workers


def _run_sub(ctx: _Context, kind: str, fold: int) -> SubResult:
    t0 = time.perf_counter()
    train_ids, test_ids = ctx.plan.train_ids(fold), ctx.plan.test_ids(fold)
    table = ctx.samples.subset(train_ids)
    touches = _provenance(table, test_ids)
    base = ctx.model_configs[kind]
    seed = subexperiment_seed(ctx.cv_seed, base.seed, fold)
    config = replace(base, seed=seed)
    model = ctx.trainers.get(kind, train)(table, config)
    grid = ctx.dataset.grid
    metrics, estimates = [], {}
    for fid in test_ids:
        X = feature_matrix(ctx.dataset.feeders[fid], ctx.time_block)
        yhat = np.asarray(ctx.predictor(model, fid, X), dtype=float)
        y = ctx.dataset.measurements[fid].values
        estimates[fid] = yhat
        metrics.append(evaluate_feeder(fid, y, yhat, grid, ctx.metric_config))
    return SubResult(
        kind, fold, seed, model, list(getattr(model, "training_log", []) or []), metrics, estimates,
        tuple(table.feeders()), tuple(getattr(model, "validation_feeders", ()) or ()), len(table), touches,
        time.perf_counter() - t0,
    )


def _run_sub_global(kind: str, fold: int) -> SubResult:
    return _run_sub(_CTX, kind, fold)


# --- results --------------------------------------------------------------------


@dataclass
class ExperimentResult:
    plan: FoldPlan
    models: tuple  # model kinds in run order
    reports: dict  # (kind, fold) -> MetricReport over that fold's test feeders
    training_logs: dict  # (kind, fold) -> list
    estimates: dict  # kind -> {feeder id -> array over the grid}
    grid: TimeGrid
    dataset: Dataset | None = None
    run_dir: Path | None = None
    provenance: dict = field(default_factory=dict)  # (kind, fold) -> dict

    def combined(self, kind: str) -> MetricReport:
        """Test-feeder metrics of all folds pooled into one report."""
        feeders = [fm for f in range(self.plan.k) for fm in self.reports[(kind, f)].feeders]
        return aggregate_report(feeders)

    def combined_table(self) -> pd.DataFrame:
        rows = []
        for kind in self.models:
            agg = self.combined(kind).aggregate
            for metric in METRIC_NAMES:
                for stat in STATISTICS:
                    rows.append((kind, metric, stat, agg[metric][stat]))
        return pd.DataFrame(rows, columns=["model", "metric", "statistic", "value"], dtype=object)

    def per_fold_table(self) -> pd.DataFrame:
        rows = []
        for kind in self.models:
            for metric in METRIC_NAMES:
                means = []
                for f in range(self.plan.k):
                    stats = self.reports[(kind, f)].aggregate[metric]
                    rows.append((kind, metric, str(f), stats["count"], stats["mean"]))
                    if stats["mean"] is not None:
                        means.append(stats["mean"])
                total = sum(self.reports[(kind, f)].aggregate[metric]["count"] for f in range(self.plan.k))
                mean = float(np.mean(means)) if means else None
                std = float(np.std(means, ddof=1)) if len(means) > 1 else None
                rows.append((kind, metric, "mean", total, mean))
                rows.append((kind, metric, "std", total, std))
        return pd.DataFrame(rows, columns=["model", "metric", "fold", "count", "value"], dtype=object)

    def per_feeder_table(self) -> pd.DataFrame:
        rows = []
        for kind in self.models:
            for f in range(self.plan.k):
                for fm in self.reports[(kind, f)].feeders:
                    for metric in METRIC_NAMES:
                        rows.append((kind, f, fm.feeder_id, metric, fm.values.get(metric),
                                     fm.reasons.get(metric, "")))
        return pd.DataFrame(rows, columns=["model", "fold", "feeder_id", "metric", "value", "reason"], dtype=object)

    def test_fold(self, feeder_id: str) -> int:
        folds = self.plan.test_fold()
        if feeder_id not in folds:
            raise LookupError(f"feeder {feeder_id!r} is not in any fold's test set")
        return folds[feeder_id]


def _write_table(df: pd.DataFrame, path: Path) -> None:
    df = df.copy()
    df["value"] = [format_value(v) for v in df["value"]]
    df.to_csv(path, index=False, lineterminator="\n")


def write_reports(result: ExperimentResult, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "combined_table.csv", out / "per_fold_table.csv", out / "per_feeder_metrics.csv"]
    _write_table(result.combined_table(), paths[0])
    _write_table(result.per_fold_table(), paths[1])
    _write_table(result.per_feeder_table(), paths[2])
    return paths


def write_estimates(path, grid: TimeGrid, estimates: dict, test_fold: dict) -> None:
    stamps = format_timestamps(grid.timestamps())
    ids = sorted(estimates)
    n = grid.n_steps
    df = pd.DataFrame({
        "feeder_id": np.repeat(np.array(ids, dtype=object), n),
        "timestamp": np.tile(stamps, len(ids)),
        "fold": np.repeat([test_fold[i] for i in ids], n),
        "estimate_kw": np.concatenate([estimates[i] for i in ids]) if ids else np.empty(0),
    })
    df.to_csv(path, index=False, float_format="%.6f", lineterminator="\n")


def read_estimates(path, grid: TimeGrid) -> dict:
    df = pd.read_csv(path, dtype={"feeder_id": str}, float_precision="round_trip")
    out = {}
    for fid, part in df.groupby("feeder_id", sort=True):
        values = np.full(grid.n_steps, np.nan)
        idx = grid_indices(grid, part["timestamp"])
        values[idx] = part["estimate_kw"].to_numpy(dtype=float)
        out[fid] = values
    return out


def grid_indices(grid: TimeGrid, stamps) -> np.ndarray:
    ts = pd.to_datetime(pd.Series(stamps), format="ISO8601").to_numpy().astype("datetime64[m]")
    return ((ts - np.datetime64(grid.start, "m")).astype(np.int64) // 15).astype(np.int64)


def dataset_fingerprint(dataset: Dataset) -> str:
    h = hashlib.sha256()
    h.update(repr((dataset.grid.start.isoformat(), dataset.grid.n_steps)).encode())
    for fid in dataset.feeder_ids:
        h.update(fid.encode())
        h.update(dataset.feeders[fid].as_array().tobytes())
        if fid in dataset.measurements:
            h.update(np.nan_to_num(dataset.measurements[fid].values, nan=-1e300).tobytes())
    h.update(dataset.weather.as_matrix().tobytes())
    return h.hexdigest()[:16]


def run_digest(fingerprint: str, plan: FoldPlan, model_configs: dict, metric_config: MetricConfig,
               models) -> str:
    blob = json.dumps({
        "data": fingerprint,
        "plan": plan.to_dict(),
        "models": {k: model_configs[k].to_dict() for k in models},
        "metrics": metric_config.__dict__,
    }, sort_keys=True, default=list).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def run_experiment(
    dataset: Dataset,
    model_configs: dict | None = None,
    plan: FoldPlan | None = None,
    metric_config: MetricConfig | None = None,
    run_dir=None,
    crossval: CrossvalConfig | None = None,
    trainers: dict | None = None,
    predictor: Predictor = default_predictor,
    data_dir=None,
) -> ExperimentResult:
    """Run every (model kind, fold) sub-experiment and, if ``run_dir`` is
    given, write models, estimates, reports and the manifest there.

    ``trainers`` maps a model kind to a replacement for :func:`train`, and
    ``predictor(model, feeder_id, X)`` replaces ``model.predict``; both exist
    so tests can inject reference models.
    """
    global _CTX
    crossval = crossval or CrossvalConfig()
    metric_config = metric_config or MetricConfig()
    configs = {k: TrainConfig(k) for k in MODEL_KINDS}
    configs.update(model_configs or {})
    plan = plan or plan_folds(dataset.feeder_ids, crossval.k, crossval.seed)
    kinds = tuple(crossval.models)
    missing = set(dataset.feeder_ids) - set(plan.test_fold())
    if missing:
        raise ConfigError(f"fold plan does not cover feeders {sorted(missing)[:5]}")
    for f in range(plan.k):
        if set(plan.train_ids(f)) & set(plan.test_ids(f)):
            raise ConfigError(f"fold {f}: train and test feeders overlap")

    samples = build_samples(dataset)
    ctx = _Context(dataset, samples, time_features(dataset.weather, dataset.calendar), plan, configs,
                   metric_config, crossval.seed, dict(trainers or {}), predictor)
    # longest jobs first so a small pool stays busy
    jobs = sorted(((k, f) for k in kinds for f in range(plan.k)),
                  key=lambda kf: (("boosted_trees", "neural", "linear").index(kf[0]), kf[1]))
    subs = {}
    if crossval.workers == 1:
        for kind, fold in jobs:
            subs[(kind, fold)] = _run_sub(ctx, kind, fold)
    else:
        _CTX = ctx
        try:
            with ProcessPoolExecutor(crossval.workers, mp_context=mp.get_context("fork")) as pool:
                futures = {job: pool.submit(_run_sub_global, *job) for job in jobs}
                subs = {job: fut.result() for job, fut in futures.items()}
        finally:
            _CTX = None

    test_fold = plan.test_fold()
    result = ExperimentResult(
        plan=plan,
        models=kinds,
        reports={key: aggregate_report(sub.feeder_metrics) for key, sub in subs.items()},
        training_logs={key: sub.training_log for key, sub in subs.items()},
        estimates={k: {fid: subs[(k, test_fold[fid])].estimates[fid] for fid in sorted(test_fold)} for k in kinds},
        grid=dataset.grid,
        dataset=dataset,
        provenance={key: {"seed": sub.seed, "n_train_rows": sub.n_train_rows,
                          "train_feeders": len(sub.train_feeders),
                          "validation_feeders": list(sub.validation_feeders),
                          "test_touches": sub.test_touches} for key, sub in subs.items()},
    )
    for key, sub in subs.items():
        if sub.test_touches or set(sub.train_feeders) & set(plan.test_ids(key[1])):
            raise AssertionError(f"{key}: test-feeder samples reached training")
    if run_dir is not None:
        _write_run(result, subs, Path(run_dir), configs, metric_config, crossval, data_dir)
    return result


def _write_run(result, subs, run_dir: Path, configs, metric_config, crossval, data_dir) -> None:
    for sub_dir in ("models", "logs", "estimates"):
        (run_dir / sub_dir).mkdir(parents=True, exist_ok=True)
    fingerprint = dataset_fingerprint(result.dataset)
    digest = run_digest(fingerprint, result.plan, configs, metric_config, result.models)
    subexperiments = []
    for kind in result.models:
        for f in range(result.plan.k):
            sub = subs[(kind, f)]
            name = f"{kind}_fold{f}"
            entry = {"model": kind, "fold": f, **result.provenance[(kind, f)]}
            if isinstance(sub.model, TrainedModel):
                save_model(sub.model, run_dir / "models" / f"{name}.npz")
                entry["model_file"] = f"models/{name}.npz"
                entry["config_digest"] = sub.model.config.digest() if sub.model.config else None
            (run_dir / "logs" / f"{name}.json").write_text(json.dumps(sub.training_log, indent=1) + "\n")
            subexperiments.append(entry)
    test_fold = result.plan.test_fold()
    for kind in result.models:
        write_estimates(run_dir / "estimates" / f"{kind}.csv", result.grid, result.estimates[kind], test_fold)
    write_reports(result, run_dir)
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "run_digest": digest,
        "dataset_fingerprint": fingerprint,
        "data_dir": str(Path(data_dir).resolve()) if data_dir else None,
        "grid": {"start": result.grid.start.isoformat(), "n_steps": result.grid.n_steps},
        "models": list(result.models),
        "model_configs": {k: configs[k].to_dict() for k in result.models},
        "metric_config": metric_config.__dict__,
        "crossval": {"k": crossval.k, "seed": crossval.seed, "workers": crossval.workers},
        "plan": result.plan.to_dict(),
        "subexperiments": subexperiments,
    }
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True, default=list) + "\n")
    timings = {f"{k}_fold{f}": round(subs[(k, f)].seconds, 3) for k in result.models for f in range(result.plan.k)}
    (run_dir / "timings.json").write_text(json.dumps(timings, indent=1) + "\n")


def load_run(run_dir, data_dir=None) -> ExperimentResult:
    """Rebuild a result from a run directory. Per-feeder metrics are read back
    from ``per_feeder_metrics.csv``; the dataset is reloaded when its
    directory is known (needed for profile exports)."""
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    plan = FoldPlan.from_dict(manifest["plan"])
    grid = TimeGrid(dt.datetime.fromisoformat(manifest["grid"]["start"]), manifest["grid"]["n_steps"])
    kinds = tuple(manifest["models"])
    df = pd.read_csv(run_dir / "per_feeder_metrics.csv", dtype={"feeder_id": str, "reason": str, "value": str},
                     keep_default_na=False)
    reports = {}
    for kind in kinds:
        for f in range(plan.k):
            part = df[(df["model"] == kind) & (df["fold"] == f)]
            feeders = {}
            for fid, metric, value, reason in part[["feeder_id", "metric", "value", "reason"]].itertuples(
                    index=False, name=None):
                fm = feeders.setdefault(fid, FeederMetrics(fid))
                fm.values[metric] = float(value) if value != "" else None
                if reason:
                    fm.reasons[metric] = reason
            reports[(kind, f)] = aggregate_report(list(feeders.values()))
    logs = {}
    for kind in kinds:
        for f in range(plan.k):
            path = run_dir / "logs" / f"{kind}_fold{f}.json"
            logs[(kind, f)] = json.loads(path.read_text()) if path.exists() else []
    estimates = {k: read_estimates(run_dir / "estimates" / f"{k}.csv", grid) for k in kinds}
    data_dir = data_dir or manifest.get("data_dir")
    dataset = read_dataset(data_dir) if data_dir and Path(data_dir).exists() else None
    provenance = {(e["model"], e["fold"]): e for e in manifest["subexperiments"]}
    return ExperimentResult(plan, kinds, reports, logs, estimates, grid, dataset, run_dir, provenance)


# --- profile export ---------------------------------------------------------------


def parse_week(week, grid: TimeGrid) -> tuple[int, int]:
    """``"2023-W05"``, ``"2023-5"`` or a bare week number (year of the grid start)."""
    if isinstance(week, int):
        return grid.start.isocalendar()[0], week
    text = str(week).strip().upper()
    if "W" in text or "-" in text:
        year, _, num = text.replace("-W", "-").replace("W", "-").partition("-")
        return int(year), int(num)
    return grid.start.isocalendar()[0], int(text)


def export_profiles(result: ExperimentResult, feeder_id: str, week, model: str = "boosted_trees",
                    path=None) -> pd.DataFrame:
    """Measurement, estimate and weather of one test feeder over an ISO week.

    Gap steps keep the estimate and leave the measurement empty. Only the
    part of the week inside the dataset period is returned.
    """
    fold = result.test_fold(feeder_id)
    if model not in result.estimates:
        raise LookupError(f"model {model!r} not in this run ({', '.join(result.models)})")
    if result.dataset is None:
        raise LookupError("dataset not available; pass data_dir to load_run")
    year, num = parse_week(week, result.grid)
    try:
        monday = dt.date.fromisocalendar(year, num, 1)
    except ValueError as exc:
        raise LookupError(f"invalid ISO week {year}-W{num}") from exc
    grid = result.grid
    start = dt.datetime.combine(monday, dt.time())
    first = (start - grid.start) // dt.timedelta(minutes=15)
    idx = np.arange(first, first + 7 * 96)
    idx = idx[(idx >= 0) & (idx < grid.n_steps)]
    if len(idx) == 0:
        raise LookupError(f"week {year}-W{num:02d} lies outside the dataset period")
    weather = result.dataset.weather
    df = pd.DataFrame({
        "timestamp": format_timestamps(grid.timestamps()[idx]),
        "measurement_kw": result.dataset.measurements[feeder_id].values[idx],
        "estimate_kw": result.estimates[model][feeder_id][idx],
        "temperature_c": weather.air_temperature[idx],
        "radiation_wm2": weather.global_radiation[idx],
    })
    df.attrs["fold"] = fold
    if path is not None:
        df.to_csv(path, index=False, float_format="%.4f", lineterminator="\n")
    return df
