"""CSV readers/writers for the four dataset files.

    measurements.csv  feeder_id,timestamp,active_power_kw   (missing rows are gaps)
    metadata.csv      feeder_id + the 21 metadata categories
    weather.csv       timestamp,global_radiation_wm2,air_temperature_c,precipitation_mm,snow_height_cm
    calendar.csv      date,is_holiday,is_workday

The weather file is gap-free and defines the dataset's time grid.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .domain import (
    METADATA_FIELDS,
    AlignmentError,
    CalendarDay,
    FeederMetadata,
    MeasurementSeries,
    TimeGrid,
    WeatherSeries,
)

TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M"
CSV_DECIMALS = 4
FLOAT_FORMAT = f"%.{CSV_DECIMALS}f"
WEATHER_COLUMNS = {
    "global_radiation": "global_radiation_wm2",
    "air_temperature": "air_temperature_c",
    "precipitation": "precipitation_mm",
    "snow_height": "snow_height_cm",
}


@dataclass
class Dataset:
    grid: TimeGrid
    feeders: dict[str, FeederMetadata]
    measurements: dict[str, MeasurementSeries]
    weather: WeatherSeries
    calendar: list[CalendarDay]

    @property
    def feeder_ids(self) -> list[str]:
        return sorted(self.feeders)

    def subset(self, feeder_ids) -> "Dataset":
        ids = sorted(feeder_ids)
        return Dataset(
            self.grid,
            {i: self.feeders[i] for i in ids},
            {i: self.measurements[i] for i in ids if i in self.measurements},
            self.weather,
            self.calendar,
        )


def format_timestamps(ts: np.ndarray) -> np.ndarray:
    return pd.DatetimeIndex(ts).strftime(TIMESTAMP_FORMAT).to_numpy()


def _indices_on_grid(grid: TimeGrid, timestamps) -> np.ndarray:
    ts = pd.to_datetime(timestamps, format="ISO8601").to_numpy().astype("datetime64[m]")
    offset = (ts - np.datetime64(grid.start, "m")).astype(np.int64)
    j, rem = np.divmod(offset, 15)
    if (rem != 0).any() or (j < 0).any() or (j >= grid.n_steps).any():
        raise AlignmentError("timestamps do not lie on the dataset grid")
    return j


def write_measurements(path, measurements) -> None:
    frames = []
    by_id = {m.feeder_id: m for m in measurements}
    for fid in sorted(by_id):
        m = by_id[fid]
        idx = m.present_indices
        frames.append(
            pd.DataFrame(
                {
                    "feeder_id": fid,
                    "timestamp": format_timestamps(m.grid.timestamps()[idx]),
                    "active_power_kw": m.values[idx],
                }
            )
        )
    df = pd.concat(frames) if frames else pd.DataFrame(columns=["feeder_id", "timestamp", "active_power_kw"])
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def read_measurements(path, grid: TimeGrid) -> dict[str, MeasurementSeries]:
    return series_from_frame(pd.read_csv(path, dtype={"feeder_id": str}, float_precision="round_trip"), grid)


def series_from_frame(df: pd.DataFrame, grid: TimeGrid, value_column: str = "active_power_kw"
                      ) -> dict[str, MeasurementSeries]:
    """Long-format (feeder_id, timestamp, value) rows to gap-filled series."""
    out = {}
    if df.empty:
        return out
    j = _indices_on_grid(grid, df["timestamp"])
    values = df[value_column].to_numpy(dtype=float)
    for fid, rows in df.groupby("feeder_id", sort=True).indices.items():
        series = np.full(grid.n_steps, np.nan)
        if len(np.unique(j[rows])) != len(rows):
            raise AlignmentError(f"{fid}: duplicate timestamps")
        series[j[rows]] = values[rows]
        out[fid] = MeasurementSeries(fid, grid, series)
    return out


def write_metadata(path, feeders: dict[str, FeederMetadata]) -> None:
    ids = sorted(feeders)
    df = pd.DataFrame([feeders[i].as_array() for i in ids], columns=METADATA_FIELDS)
    df["housing_units"] = df["housing_units"].astype(int)
    df.insert(0, "feeder_id", ids)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def read_metadata(path) -> dict[str, FeederMetadata]:
    df = pd.read_csv(path, dtype={"feeder_id": str}, float_precision="round_trip")
    expected = ["feeder_id", *METADATA_FIELDS]
    if list(df.columns) != expected:
        raise ValueError(f"{path}: columns must be {expected}")
    return {
        row[0]: FeederMetadata.from_array(row[1:])
        for row in df.itertuples(index=False, name=None)
    }


def write_weather(path, weather: WeatherSeries) -> None:
    df = pd.DataFrame({"timestamp": format_timestamps(weather.grid.timestamps())})
    for name, col in WEATHER_COLUMNS.items():
        df[col] = getattr(weather, name)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def read_weather(path) -> WeatherSeries:
    df = pd.read_csv(path, float_precision="round_trip")
    ts = pd.to_datetime(df["timestamp"], format="ISO8601")
    grid = TimeGrid(ts.iloc[0].to_pydatetime(), len(df))
    j = _indices_on_grid(grid, df["timestamp"])
    if not np.array_equal(j, np.arange(grid.n_steps)):
        raise AlignmentError("weather.csv must be gap-free and ordered")
    return WeatherSeries(grid, **{name: df[col].to_numpy(dtype=float) for name, col in WEATHER_COLUMNS.items()})


def write_calendar(path, calendar: list[CalendarDay]) -> None:
    df = pd.DataFrame(
        {
            "date": [d.date.isoformat() for d in calendar],
            "is_holiday": [int(d.is_holiday) for d in calendar],
            "is_workday": [int(d.is_workday) for d in calendar],
        }
    )
    df.to_csv(path, index=False, lineterminator="\n")


def read_calendar(path) -> list[CalendarDay]:
    df = pd.read_csv(path, float_precision="round_trip")
    return [
        CalendarDay(dt.date.fromisoformat(d), bool(h), bool(w))
        for d, h, w in df[["date", "is_holiday", "is_workday"]].itertuples(index=False, name=None)
    ]


def write_dataset(out_dir, dataset: Dataset) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_measurements(out / "measurements.csv", dataset.measurements.values())
    write_metadata(out / "metadata.csv", dataset.feeders)
    write_weather(out / "weather.csv", dataset.weather)
    write_calendar(out / "calendar.csv", dataset.calendar)


def read_dataset(in_dir) -> Dataset:
    d = Path(in_dir)
    weather = read_weather(d / "weather.csv")
    feeders = read_metadata(d / "metadata.csv")
    measurements = read_measurements(d / "measurements.csv", weather.grid)
    calendar = read_calendar(d / "calendar.csv")
    return Dataset(weather.grid, feeders, measurements, weather, calendar)
