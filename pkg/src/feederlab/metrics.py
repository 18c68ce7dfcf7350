"""All-observation and peak metrics for pseudo-measurement evaluation.

Series are float arrays on a :class:`~feederlab.domain.TimeGrid`; NaN in the
ground truth marks a measuring gap. Metrics only look at present indices.
Estimates are expected to be finite everywhere.

Peak metrics work on daily extremum pairs ``(j1, j2)``: ``j1`` indexes the
ground-truth maximum (consumption) or minimum (feed-in) of an eligible day and
``j2`` the estimate's extremum over the same present indices. Equal extrema
resolve to the earliest index on both sides.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .domain import STEP_HOURS, STEPS_PER_DAY, TimeGrid, day_partition

METRIC_NAMES = ("mae", "mae_norm", "rmse", "pmag_c", "pmag_f", "ptime_c", "ptime_f", "pshape_c", "pshape_f")
STATISTICS = ("count", "mean", "std", "min", "25%", "50%", "75%", "max")


class UndefinedMetric(ValueError):
    """The metric has no value for this input (empty index set, zero range, no peaks)."""


@dataclass(frozen=True)
class MetricConfig:
    peak_threshold_kw: float = 10.0
    min_peak_days: int = 10
    shape_window_h: float = 2.0
    min_window_points: int = 3

    @property
    def window_steps(self) -> int:
        steps = self.shape_window_h / STEP_HOURS
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError(f"shape window {self.shape_window_h} h is not a multiple of 15 min")
        return int(round(steps))


def _mask(y, present):
    y = np.asarray(y, dtype=float)
    if present is None:
        return ~np.isnan(y)
    return np.asarray(present, dtype=bool) & ~np.isnan(y)


def _errors(y, yhat, present):
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape:
        raise ValueError(f"ground truth {y.shape} and estimate {yhat.shape} are not aligned")
    m = _mask(y, present)
    if not m.any():
        raise UndefinedMetric("no present measurements")
    return y[m] - yhat[m], y[m]


def mae(y, yhat, present=None) -> float:
    err, _ = _errors(y, yhat, present)
    return float(np.mean(np.abs(err)))


def rmse(y, yhat, present=None) -> float:
    err, _ = _errors(y, yhat, present)
    return float(np.sqrt(np.mean(err**2)))


def mae_norm(y, yhat, present=None) -> float:
    """MAE divided by the min-max range of the present ground truth."""
    err, yp = _errors(y, yhat, present)
    spread = yp.max() - yp.min()
    if not spread > 0:
        raise UndefinedMetric("ground truth has zero min-max range")
    return float(np.mean(np.abs(err)) / spread)


@dataclass(frozen=True)
class PeakSet:
    feeder_id: str
    peak_type: str  # "C" consumption or "F" feed-in
    pairs: tuple = ()
    eligible_days: int = 0

    def __len__(self):
        return len(self.pairs)

    @property
    def j1(self) -> np.ndarray:
        return np.array([p[0] for p in self.pairs], dtype=np.int64)

    @property
    def j2(self) -> np.ndarray:
        return np.array([p[1] for p in self.pairs], dtype=np.int64)


@dataclass(frozen=True)
class _DayLayout:
    """Index layout of a grid as a (days x 96) matrix."""

    starts: np.ndarray
    stops: np.ndarray
    day: np.ndarray
    slot: np.ndarray

    @classmethod
    def of(cls, grid: TimeGrid) -> "_DayLayout":
        days = day_partition(grid)
        starts = np.array([d.start for d in days])
        stops = np.array([d.stop for d in days])
        day = np.repeat(np.arange(len(days)), stops - starts)
        slot = np.arange(grid.n_steps) - starts[day]
        return cls(starts, stops, day, slot)

    def matrix(self, values, fill):
        out = np.full((len(self.starts), STEPS_PER_DAY), fill, dtype=float)
        out[self.day, self.slot] = values
        return out


def extract_peaks(y, yhat, grid: TimeGrid, peak_type: str, threshold: float = 10.0, min_days: int = 10,
                  present=None, feeder_id: str = "") -> PeakSet:
    """Daily extremum pairs for days whose present ground truth reaches the threshold.

    Consumption days need some ``y >= threshold``, feed-in days some
    ``y <= -threshold``. Fewer than ``min_days`` eligible days yields an empty set.
    """
    if peak_type not in ("C", "F"):
        raise ValueError(f"peak type must be 'C' or 'F', got {peak_type!r}")
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != (grid.n_steps,) or yhat.shape != y.shape:
        raise ValueError("series are not aligned with the grid")
    sign = 1.0 if peak_type == "C" else -1.0
    m = _mask(y, present)
    layout = _DayLayout.of(grid)
    truth = layout.matrix(np.where(m, sign * y, -np.inf), -np.inf)
    est = layout.matrix(np.where(m, sign * yhat, -np.inf), -np.inf)
    eligible = np.flatnonzero(truth.max(axis=1) >= threshold)
    if len(eligible) < min_days:
        return PeakSet(feeder_id, peak_type, (), len(eligible))
    starts = layout.starts[eligible]
    j1 = starts + truth[eligible].argmax(axis=1)
    j2 = starts + est[eligible].argmax(axis=1)
    pairs = tuple((int(a), int(b)) for a, b in zip(j1, j2))
    return PeakSet(feeder_id, peak_type, pairs, len(eligible))


def _require(peaks: PeakSet):
    if len(peaks) == 0:
        raise UndefinedMetric(f"empty {peaks.peak_type} peak set")


def pmag(y, yhat, peaks: PeakSet) -> float:
    """Mean absolute difference between ground-truth and estimated daily peak values (kW)."""
    _require(peaks)
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    return float(np.mean(np.abs(y[peaks.j1] - yhat[peaks.j2])))


def ptime(peaks: PeakSet, grid: TimeGrid | None = None) -> float:
    """Mean absolute peak timing error in hours."""
    _require(peaks)
    step_h = STEP_HOURS if grid is None else grid.step.total_seconds() / 3600.0
    return float(np.mean(np.abs(peaks.j1 - peaks.j2)) * step_h)


def _minmax(values, valid):
    lo = np.where(valid, values, np.inf).min(axis=1, keepdims=True)
    hi = np.where(valid, values, -np.inf).max(axis=1, keepdims=True)
    spread = hi - lo
    flat = ~(spread > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = (values - lo) / np.where(flat, 1.0, spread)
    # zero range: constant 0.5
    return np.where(flat, 0.5, s)


def pshape_scores(y, yhat, peaks: PeakSet, grid: TimeGrid, window_h: float = 2.0, present=None,
                  min_points: int = 3) -> np.ndarray:
    """Per-pair shape score, NaN for pairs whose window has too few present points.

    The window holds the present indices within ``window_h`` of ``j1`` (inclusive),
    clipped to ``j1``'s calendar day. Both series are min-max normalised over the
    window independently and the score sums their absolute differences.
    """
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    w = MetricConfig(shape_window_h=window_h).window_steps
    if len(peaks) == 0:
        return np.empty(0)
    m = _mask(y, present)
    layout = _DayLayout.of(grid)
    j1 = peaks.j1
    day = layout.day[j1]
    idx = j1[:, None] + np.arange(-w, w + 1)[None, :]
    valid = (idx >= layout.starts[day][:, None]) & (idx < layout.stops[day][:, None])
    idx = np.clip(idx, 0, grid.n_steps - 1)
    valid &= m[idx]
    s = _minmax(np.where(valid, y[idx], 0.0), valid)
    s_hat = _minmax(np.where(valid, yhat[idx], 0.0), valid)
    score = np.where(valid, np.abs(s - s_hat), 0.0).sum(axis=1)
    return np.where(valid.sum(axis=1) >= min_points, score, np.nan)


def pshape(y, yhat, peaks: PeakSet, grid: TimeGrid, window_h: float = 2.0, present=None,
           min_points: int = 3) -> float:
    _require(peaks)
    scores = pshape_scores(y, yhat, peaks, grid, window_h, present, min_points)
    kept = scores[~np.isnan(scores)]
    if len(kept) == 0:
        raise UndefinedMetric(f"every {peaks.peak_type} peak window has fewer than {min_points} points")
    return float(kept.mean())


# --- per-feeder evaluation and aggregation --------------------------------------


@dataclass
class FeederMetrics:
    feeder_id: str
    values: dict = field(default_factory=dict)  # metric -> float | None
    reasons: dict = field(default_factory=dict)  # metric -> why undefined
    n_obs: int = 0
    peak_days: dict = field(default_factory=dict)  # "C"/"F" -> |P|
    shape_skipped: dict = field(default_factory=dict)  # "C"/"F" -> skipped pairs

    def get(self, metric):
        return self.values.get(metric)


def evaluate_feeder(feeder_id: str, y, yhat, grid: TimeGrid, config: MetricConfig | None = None,
                    present=None) -> FeederMetrics:
    """All nine metrics for one feeder; undefined ones are None with a reason."""
    config = config or MetricConfig()
    out = FeederMetrics(feeder_id, n_obs=int(_mask(y, present).sum()))

    def record(name, fn, *args):
        try:
            out.values[name] = fn(*args)
        except UndefinedMetric as exc:
            out.values[name] = None
            out.reasons[name] = str(exc)

    record("mae", mae, y, yhat, present)
    record("mae_norm", mae_norm, y, yhat, present)
    record("rmse", rmse, y, yhat, present)
    for peak_type in ("C", "F"):
        suffix = peak_type.lower()
        peaks = extract_peaks(y, yhat, grid, peak_type, config.peak_threshold_kw, config.min_peak_days,
                              present, feeder_id)
        out.peak_days[peak_type] = len(peaks)
        scores = pshape_scores(y, yhat, peaks, grid, config.shape_window_h, present, config.min_window_points)
        out.shape_skipped[peak_type] = int(np.isnan(scores).sum())
        record(f"pmag_{suffix}", pmag, y, yhat, peaks)
        record(f"ptime_{suffix}", ptime, peaks, grid)
        record(f"pshape_{suffix}", pshape, y, yhat, peaks, grid, config.shape_window_h, present,
               config.min_window_points)
    return out


def describe(values) -> dict:
    """count/mean/std/min/quartiles/max; std uses ddof=1, quantiles linear interpolation."""
    v = np.asarray([x for x in values if x is not None], dtype=float)
    if len(v) == 0:
        return {"count": 0, **{k: None for k in STATISTICS[1:]}}
    q25, q50, q75 = np.percentile(v, [25, 50, 75])
    return {
        "count": len(v),
        "mean": float(v.mean()),
        "std": float(v.std(ddof=1)) if len(v) > 1 else None,
        "min": float(v.min()),
        "25%": float(q25),
        "50%": float(q50),
        "75%": float(q75),
        "max": float(v.max()),
    }


@dataclass
class MetricReport:
    feeders: list  # FeederMetrics, ordered by feeder id
    aggregate: dict  # metric -> describe() output

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for fm in self.feeders:
            for metric in METRIC_NAMES:
                value = fm.values.get(metric)
                rows.append(("feeder", fm.feeder_id, metric, "value", value, fm.reasons.get(metric, "")))
        for metric in METRIC_NAMES:
            for stat, value in self.aggregate[metric].items():
                reason = "" if value is not None else ("no evaluated feeders" if stat != "std" else "fewer than two feeders")
                rows.append(("aggregate", "", metric, stat, value, reason))
        return pd.DataFrame(rows, columns=["row_type", "feeder_id", "metric", "statistic", "value", "reason"],
                            dtype=object)

    def to_csv(self, path) -> None:
        df = self.to_frame()
        df["value"] = [format_value(v) for v in df["value"]]
        df.to_csv(path, index=False, lineterminator="\n")


def format_value(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def aggregate_report(per_feeder: list[FeederMetrics]) -> MetricReport:
    """Feeder-wise metrics first, then statistics over the feeders where each is defined."""
    feeders = sorted(per_feeder, key=lambda fm: fm.feeder_id)
    agg = {m: describe(fm.values.get(m) for fm in feeders) for m in METRIC_NAMES}
    return MetricReport(feeders, agg)


def evaluate_series(truth: dict, estimates: dict, grid: TimeGrid, config: MetricConfig | None = None) -> MetricReport:
    """Evaluate every feeder present in both mappings of feeder_id -> array."""
    common = sorted(set(truth) & set(estimates))
    return aggregate_report([evaluate_feeder(f, truth[f], estimates[f], grid, config) for f in common])
