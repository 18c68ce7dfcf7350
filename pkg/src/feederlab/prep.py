"""Cleaning filters, 15-minute aggregation and feature assembly."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np
import pandas as pd

from .domain import (
    INSTALLED_POWER_FIELDS,
    N_FEATURES,
    AlignmentError,
    CalendarDay,
    FeatureRow,
    FeederMetadata,
    MeasurementSeries,
    TimeGrid,
    WeatherSeries,
)
from .io import Dataset, format_timestamps

DAYS_PER_YEAR = 365.25

RULES = {
    "a": "fewer than one day of measurements",
    "b": "measurement never exceeds the minimum absolute power",
    "c": "installed power of a category exceeds the feeder limit",
    "d": "no metadata",
    "e": "feed-in exceeds installed producer power plus margin",
    "f": "night-time feed-in although PV is the only producer",
}


class JoinError(ValueError):
    """Weather or calendar data is missing for a sample's timestamp."""


@dataclass
class CleaningConfig:
    min_measurements: int = 96
    min_abs_power_kw: float = 5.0
    category_limit_kw: float = 400.0
    feed_in_margin_kw: float = 5.0
    night_start_minute: int = 0
    night_end_minute: int = 120  # exclusive


@dataclass
class CleaningReport:
    failed_rule: dict[str, str | None] = field(default_factory=dict)

    @property
    def kept(self) -> list[str]:
        return sorted(f for f, rule in self.failed_rule.items() if rule is None)

    def removed_counts(self) -> dict[str, int]:
        counts = {rule: 0 for rule in RULES}
        for rule in self.failed_rule.values():
            if rule is not None:
                counts[rule] += 1
        return counts

    def to_frame(self) -> pd.DataFrame:
        ids = sorted(self.failed_rule)
        rules = [self.failed_rule[i] for i in ids]
        return pd.DataFrame(
            {
                "feeder_id": ids,
                "kept": [int(r is None) for r in rules],
                "failed_rule": [r or "" for r in rules],
                "reason": [RULES[r] if r else "" for r in rules],
            }
        )


def aggregate_to_15min(timestamps, values, feeder_id: str = "", grid: TimeGrid | None = None) -> MeasurementSeries:
    """Mean of the present minute values in each 15-minute bin; empty bins are gaps.

    Bins are labelled by their start time. Without an explicit grid the
    series spans the bins of the first and last raw timestamp.
    """
    ts = np.asarray(timestamps, dtype="datetime64[m]")
    vals = np.asarray(values, dtype=float)
    if ts.shape != vals.shape:
        raise ValueError("timestamps and values differ in length")
    bins = ts.astype("datetime64[m]").astype(np.int64) // 15
    if grid is None:
        first = np.datetime64(int(bins.min()) * 15, "m").astype(dt.datetime)
        last = np.datetime64(int(bins.max()) * 15, "m").astype(dt.datetime)
        grid = TimeGrid.from_range(first, last)
    j = bins - np.datetime64(grid.start, "m").astype(np.int64) // 15
    ok = ~np.isnan(vals)
    if ((j < 0) | (j >= grid.n_steps)).any():
        raise AlignmentError("raw timestamps fall outside the target grid")
    sums = np.bincount(j[ok], weights=vals[ok], minlength=grid.n_steps)
    counts = np.bincount(j[ok], minlength=grid.n_steps)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(counts > 0, sums / counts, np.nan)
    return MeasurementSeries(feeder_id, grid, out)


def check_feeder(meta: FeederMetadata | None, series: MeasurementSeries | None, config: CleaningConfig) -> str | None:
    """First violated rule (a)-(f), or None if the feeder is plausible."""
    values = series.values[series.present] if series is not None else np.empty(0)
    if len(values) < config.min_measurements:
        return "a"
    if not np.abs(values).max() > config.min_abs_power_kw:
        return "b"
    if meta is None:
        return "d"
    if max(getattr(meta, name) for name in INSTALLED_POWER_FIELDS) > config.category_limit_kw:
        return "c"
    if meta.is_empty():
        return "d"
    producer_kw = meta.pv_systems + meta.other_producers + meta.batteries
    if values.min() < -(producer_kw + config.feed_in_margin_kw):
        return "e"
    if meta.pv_systems > 0 and meta.other_producers == 0 and meta.batteries == 0:
        minute = series.grid.minute_of_day()
        night = (minute >= config.night_start_minute) & (minute < config.night_end_minute) & series.present
        if (series.values[night] < 0).any():
            return "f"
    return None


def filter_feeders(dataset: Dataset, config: CleaningConfig | None = None) -> tuple[list[str], CleaningReport]:
    config = config or CleaningConfig()
    for m in dataset.measurements.values():
        if m.grid != dataset.grid:
            raise AlignmentError(f"{m.feeder_id}: grid differs from the dataset grid")
    report = CleaningReport()
    for fid in sorted(set(dataset.feeders) | set(dataset.measurements)):
        report.failed_rule[fid] = check_feeder(dataset.feeders.get(fid), dataset.measurements.get(fid), config)
    return report.kept, report


def clean_dataset(dataset: Dataset, config: CleaningConfig | None = None) -> tuple[Dataset, CleaningReport]:
    kept, report = filter_feeders(dataset, config)
    return dataset.subset(kept), report


# --- features -----------------------------------------------------------------


def _cyclic(value, period):
    angle = 2 * np.pi * np.asarray(value, dtype=float) / period
    return np.sin(angle), np.cos(angle)


def encode_timestamp(t: dt.datetime) -> tuple[float, float, float, float, float, float]:
    """sin/cos of day-of-year (period 365.25), day-of-week and minute-of-day."""
    doy = t.timetuple().tm_yday
    minute = t.hour * 60 + t.minute
    out = _cyclic(doy, DAYS_PER_YEAR) + _cyclic(t.weekday(), 7) + _cyclic(minute, 1440)
    return tuple(float(v) for v in out)


def encode_grid(grid: TimeGrid) -> np.ndarray:
    """Vectorised :func:`encode_timestamp` for every grid index, shape (n, 6)."""
    ts = grid.timestamps()
    days = ts.astype("datetime64[D]")
    doy = (days - ts.astype("datetime64[Y]")).astype(np.int64) + 1
    dow = (days.astype(np.int64) + 3) % 7  # 1970-01-01 was a Thursday
    cols = _cyclic(doy, DAYS_PER_YEAR) + _cyclic(dow, 7) + _cyclic(grid.minute_of_day(), 1440)
    return np.column_stack(cols)


def calendar_flags(grid: TimeGrid, calendar: list[CalendarDay]) -> np.ndarray:
    by_date = {c.date: c for c in calendar}
    dates = grid.dates()
    missing = [d for d in dates if d not in by_date]
    if missing:
        raise JoinError(f"calendar has no entry for {missing[0]}")
    flags = np.array([[by_date[d].is_holiday, by_date[d].is_workday] for d in dates], dtype=float)
    return flags[grid.day_number()]


def time_features(weather: WeatherSeries, calendar: list[CalendarDay]) -> np.ndarray:
    """The 12 per-timestamp columns (weather, encoding, calendar), shape (n, 12)."""
    return np.hstack([weather.as_matrix(), encode_grid(weather.grid), calendar_flags(weather.grid, calendar)])


def feature_matrix(meta: FeederMetadata, time_block: np.ndarray) -> np.ndarray:
    n = len(time_block)
    return np.hstack([np.broadcast_to(meta.as_array(), (n, 21)), time_block])


class Sample(NamedTuple):
    feeder_id: str
    index: int
    features: FeatureRow
    target: float


@dataclass(eq=False)
class SampleTable:
    """Column-oriented collection of samples, one row per (feeder, present index)."""

    grid: TimeGrid
    feeder_ids: np.ndarray
    index: np.ndarray
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        n = len(self.y)
        if self.X.shape != (n, N_FEATURES):
            raise ValueError(f"feature matrix shape {self.X.shape}, expected ({n}, {N_FEATURES})")
        if len(self.feeder_ids) != n or len(self.index) != n:
            raise ValueError("sample columns differ in length")

    def __len__(self):
        return len(self.y)

    def feeders(self) -> list[str]:
        return sorted(set(self.feeder_ids.tolist()))

    def subset(self, feeder_ids) -> "SampleTable":
        mask = np.isin(self.feeder_ids, list(feeder_ids))
        return SampleTable(self.grid, self.feeder_ids[mask], self.index[mask], self.X[mask], self.y[mask])

    def rows(self) -> Iterator[Sample]:
        for fid, j, x, y in zip(self.feeder_ids, self.index, self.X, self.y):
            yield Sample(str(fid), int(j), FeatureRow.from_array(x), float(y))

    def to_csv(self, path) -> None:
        df = pd.DataFrame(self.X, columns=[f"f{k}" for k in range(N_FEATURES)])
        df.insert(0, "timestamp", format_timestamps(self.grid.timestamps()[self.index]))
        df.insert(0, "feeder_id", self.feeder_ids)
        df["target_kw"] = self.y
        df.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")

    @classmethod
    def from_csv(cls, path, grid: TimeGrid | None = None) -> "SampleTable":
        df = pd.read_csv(path, dtype={"feeder_id": str}, float_precision="round_trip")
        ts = pd.to_datetime(df["timestamp"], format="ISO8601")
        if grid is None:
            grid = TimeGrid.from_range(ts.min().to_pydatetime(), ts.max().to_pydatetime())
        offset = (ts.to_numpy().astype("datetime64[m]") - np.datetime64(grid.start, "m")).astype(np.int64)
        X = df[[f"f{k}" for k in range(N_FEATURES)]].to_numpy(dtype=float)
        return cls(grid, df["feeder_id"].to_numpy(dtype=object), offset // 15, X, df["target_kw"].to_numpy(dtype=float))


def build_samples(dataset: Dataset) -> SampleTable:
    """One sample per (feeder, present measurement), features in canonical order:
    21 metadata, 4 weather, 6 timestamp encoding, 2 calendar flags."""
    if dataset.weather.grid != dataset.grid:
        raise JoinError("weather grid differs from the measurement grid")
    block = time_features(dataset.weather, dataset.calendar)
    ids, idx, Xs, ys = [], [], [], []
    for fid in dataset.feeder_ids:
        series = dataset.measurements.get(fid)
        if series is None:
            continue
        if series.grid != dataset.grid:
            raise AlignmentError(f"{fid}: grid differs from the dataset grid")
        present = series.present_indices
        Xs.append(feature_matrix(dataset.feeders[fid], block[present]))
        ys.append(series.values[present])
        idx.append(present)
        ids.append(np.full(len(present), fid, dtype=object))
    if not ys:
        return SampleTable(dataset.grid, np.empty(0, dtype=object), np.empty(0, dtype=np.int64),
                           np.empty((0, N_FEATURES)), np.empty(0))
    X = np.vstack(Xs)
    if not np.isfinite(X).all():
        raise JoinError("non-finite feature value; weather must be gap-free")
    return SampleTable(dataset.grid, np.concatenate(ids), np.concatenate(idx), X, np.concatenate(ys))


def write_cleaning_report(path, report: CleaningReport) -> None:
    report.to_frame().to_csv(Path(path), index=False, lineterminator="\n")

