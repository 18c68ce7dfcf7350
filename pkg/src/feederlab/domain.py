"""Core data types shared by every stage: the 15-minute time grid, feeder
metadata, measurement/weather series, calendar days and feature rows.

Timestamps are naive local civil time. The synthetic grid has no DST
transitions, so day boundaries and minute-of-day are unambiguous.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field, fields
from typing import NamedTuple

import numpy as np

STEP = dt.timedelta(minutes=15)
STEPS_PER_DAY = 96
STEP_HOURS = 0.25

METADATA_FIELDS = (
    "housing_units",
    "storage_heaters",
    "heat_pumps",
    "electric_heaters",
    "ev_chargers",
    "hot_water_tanks",
    "inductive_power",
    "flow_type_heaters",
    "public_lighting",
    "other_consumers",
    "batteries",
    "pv_systems",
    "other_producers",
    "g0",
    "g1",
    "g2",
    "g3",
    "g4",
    "g5",
    "g6",
    "l0",
)

CONSUMER_FIELDS = METADATA_FIELDS[1:10]
PRODUCER_FIELDS = ("pv_systems", "other_producers")
# categories carrying installed power in kW
INSTALLED_POWER_FIELDS = CONSUMER_FIELDS + ("batteries",) + PRODUCER_FIELDS
COMMERCE_FIELDS = METADATA_FIELDS[13:]

WEATHER_FIELDS = ("global_radiation", "air_temperature", "precipitation", "snow_height")
TIMESTAMP_FEATURES = ("doy_sin", "doy_cos", "dow_sin", "dow_cos", "mod_sin", "mod_cos")
CALENDAR_FEATURES = ("is_holiday", "is_workday")
FEATURE_NAMES = METADATA_FIELDS + WEATHER_FIELDS + TIMESTAMP_FEATURES + CALENDAR_FEATURES
N_FEATURES = len(FEATURE_NAMES)

assert len(METADATA_FIELDS) == 21 and N_FEATURES == 33


class AlignmentError(ValueError):
    """Series that should share a time grid do not."""


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class TimeGrid:
    """Regular 15-minute axis: index ``j`` maps to ``start + j * 15 min``."""

    start: dt.datetime
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError(f"time grid needs at least one step, got {self.n_steps}")
        if self.start.tzinfo is not None:
            raise ValueError("time grid uses naive local timestamps")
        if self.start.second or self.start.microsecond or self.start.minute % 15:
            raise ValueError(f"grid start {self.start} is not on a 15-minute boundary")

    @property
    def step(self) -> dt.timedelta:
        return STEP

    @property
    def end(self) -> dt.datetime:
        """Timestamp of the last index."""
        return self.start + (self.n_steps - 1) * STEP

    @classmethod
    def from_range(cls, first: dt.datetime, last: dt.datetime) -> "TimeGrid":
        """Grid covering ``first`` .. ``last`` inclusive."""
        n = (last - first) // STEP + 1
        return cls(first, int(n))

    @classmethod
    def for_days(cls, first_day: dt.date, last_day: dt.date) -> "TimeGrid":
        """Grid of whole days, ``last_day`` inclusive."""
        n_days = (last_day - first_day).days + 1
        return cls(dt.datetime.combine(first_day, dt.time()), n_days * STEPS_PER_DAY)

    def index_to_timestamp(self, j: int) -> dt.datetime:
        if not 0 <= j < self.n_steps:
            raise IndexError(f"index {j} outside grid of {self.n_steps} steps")
        return self.start + j * STEP

    def timestamp_to_index(self, t: dt.datetime) -> int:
        offset = t - self.start
        j, rem = divmod(offset, STEP)
        if rem:
            raise ValueError(f"{t} is not on the grid")
        if not 0 <= j < self.n_steps:
            raise IndexError(f"{t} outside grid")
        return int(j)

    def timestamps(self) -> np.ndarray:
        """All grid timestamps as ``datetime64[m]``."""
        base = np.datetime64(self.start, "m")
        return base + np.arange(self.n_steps) * np.timedelta64(15, "m")

    def minute_of_day(self) -> np.ndarray:
        ts = self.timestamps()
        return ((ts - ts.astype("datetime64[D]")) // np.timedelta64(1, "m")).astype(np.int64)

    def day_number(self) -> np.ndarray:
        """Days since the first calendar day of the grid, per index."""
        days = self.timestamps().astype("datetime64[D]")
        return (days - days[0]).astype(np.int64)

    def dates(self) -> list[dt.date]:
        first = self.start.date()
        last = self.end.date()
        return [first + dt.timedelta(days=d) for d in range((last - first).days + 1)]


class DayRange(NamedTuple):
    date: dt.date
    start: int
    stop: int  # exclusive
    partial: bool

    def __len__(self):
        return self.stop - self.start


def day_partition(grid: TimeGrid) -> list[DayRange]:
    """Split grid indices into calendar days. Days with fewer than 96 indices
    (grid starting or ending mid-day) are flagged partial."""
    out = []
    j = 0
    t = grid.start
    while j < grid.n_steps:
        midnight = dt.datetime.combine(t.date(), dt.time())
        to_next = (midnight + dt.timedelta(days=1) - t) // STEP
        stop = min(j + int(to_next), grid.n_steps)
        out.append(DayRange(t.date(), j, stop, stop - j < STEPS_PER_DAY))
        t = t + (stop - j) * STEP
        j = stop
    return out


@dataclass(frozen=True)
class FeederMetadata:
    """Per-feeder descriptors: housing units (count), installed equipment power
    (kW) and commerce/industry average daily energy (kWh)."""

    housing_units: int = 0
    storage_heaters: float = 0.0
    heat_pumps: float = 0.0
    electric_heaters: float = 0.0
    ev_chargers: float = 0.0
    hot_water_tanks: float = 0.0
    inductive_power: float = 0.0
    flow_type_heaters: float = 0.0
    public_lighting: float = 0.0
    other_consumers: float = 0.0
    batteries: float = 0.0
    pv_systems: float = 0.0
    other_producers: float = 0.0
    g0: float = 0.0
    g1: float = 0.0
    g2: float = 0.0
    g3: float = 0.0
    g4: float = 0.0
    g5: float = 0.0
    g6: float = 0.0
    l0: float = 0.0

    def __post_init__(self):
        if self.housing_units != int(self.housing_units):
            raise ValueError("housing_units must be an integer count")
        object.__setattr__(self, "housing_units", int(self.housing_units))
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"metadata {f.name}={v} must be finite and >= 0")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in METADATA_FIELDS], dtype=float)

    @classmethod
    def from_array(cls, values) -> "FeederMetadata":
        values = list(values)
        if len(values) != len(METADATA_FIELDS):
            raise ValueError(f"expected {len(METADATA_FIELDS)} metadata values, got {len(values)}")
        return cls(**dict(zip(METADATA_FIELDS, values)))

    @property
    def producer_kw(self) -> float:
        return self.pv_systems + self.other_producers

    def is_empty(self) -> bool:
        return not np.any(self.as_array())


@dataclass(frozen=True, eq=False)
class MeasurementSeries:
    """Active power (kW) per grid index; NaN marks a measuring gap."""

    feeder_id: str
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values)
        if values.shape != (self.grid.n_steps,):
            raise AlignmentError(
                f"{self.feeder_id}: {values.shape[0]} values for a grid of {self.grid.n_steps}"
            )
        if np.isinf(values).any():
            raise ValueError(f"{self.feeder_id}: infinite measurement")
        object.__setattr__(self, "values", values)

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.values)

    @property
    def present_indices(self) -> np.ndarray:
        """The index set N_i of existing measurements."""
        return np.flatnonzero(self.present)

    def __len__(self):
        return int(self.present.sum())


@dataclass(frozen=True, eq=False)
class WeatherSeries:
    grid: TimeGrid
    global_radiation: np.ndarray  # W/m^2
    air_temperature: np.ndarray  # degC
    precipitation: np.ndarray  # mm
    snow_height: np.ndarray  # cm

    def __post_init__(self):
        for name in WEATHER_FIELDS:
            arr = _frozen(getattr(self, name))
            if arr.shape != (self.grid.n_steps,):
                raise AlignmentError(f"weather {name} has {arr.shape[0]} values, grid {self.grid.n_steps}")
            if not np.isfinite(arr).all():
                raise ValueError(f"weather {name} must be gap-free")
            object.__setattr__(self, name, arr)
        for name in ("global_radiation", "precipitation", "snow_height"):
            if (getattr(self, name) < 0).any():
                raise ValueError(f"weather {name} must be non-negative")

    def as_matrix(self) -> np.ndarray:
        return np.column_stack([getattr(self, name) for name in WEATHER_FIELDS])


@dataclass(frozen=True)
class CalendarDay:
    date: dt.date
    is_holiday: bool
    is_workday: bool

    def __post_init__(self):
        if self.is_holiday and self.is_workday:
            raise ValueError(f"{self.date}: a holiday cannot be a workday")


@dataclass(frozen=True)
class FeatureRow:
    """One 33-dimensional model input."""

    metadata: tuple
    weather: tuple
    timestamp_encoding: tuple
    calendar_flags: tuple = field(default=(0, 0))

    def __post_init__(self):
        sizes = (len(self.metadata), len(self.weather), len(self.timestamp_encoding), len(self.calendar_flags))
        if sizes != (21, 4, 6, 2):
            raise ValueError(f"feature blocks have sizes {sizes}, expected (21, 4, 6, 2)")

    def as_array(self) -> np.ndarray:
        return np.concatenate(
            [self.metadata, self.weather, self.timestamp_encoding, self.calendar_flags]
        ).astype(float)

    @classmethod
    def from_array(cls, x) -> "FeatureRow":
        x = np.asarray(x, dtype=float)
        if x.shape != (N_FEATURES,):
            raise ValueError(f"feature row must have {N_FEATURES} values, got {x.shape}")
        return cls(tuple(x[:21]), tuple(x[21:25]), tuple(x[25:31]), tuple(x[31:33]))

    def __len__(self):
        return N_FEATURES
