"""Deterministic synthetic LV feeder datasets.

Each feeder's ground truth is a bottom-up sum of parametric component models
driven by its metadata, a shared weather series and the calendar. Component
shapes are fixed templates (constants below), not learned. Consumption
components carry multiplicative log-normal noise; PV output is noise-free
apart from the cloud factor already in the radiation, so feed-in stays
bounded by installed producer power.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field

import numpy as np
from dateutil.easter import easter

from .domain import (
    COMMERCE_FIELDS,
    METADATA_FIELDS,
    STEP_HOURS,
    STEPS_PER_DAY,
    CalendarDay,
    FeederMetadata,
    MeasurementSeries,
    TimeGrid,
    WeatherSeries,
)
from .io import CSV_DECIMALS, Dataset

PV_EFFICIENCY = 0.85
BATTERY_HOURS = 2.0
BATTERY_EFFICIENCY = 0.9
BATTERY_DISCHARGE_FROM_H = 17.0
LIGHTING_RADIATION_WM2 = 5.0
CLEAR_SKY_MAX_WM2 = 1000.0


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CategorySpec:
    """Probability that a feeder has the category, and the uniform magnitude
    range (kW, kWh/day or unit count) when it does."""

    prevalence: float
    low: float
    high: float


DEFAULT_PREVALENCE = {
    "housing_units": CategorySpec(0.92, 1, 90),
    "storage_heaters": CategorySpec(0.35, 5, 80),
    "heat_pumps": CategorySpec(0.5, 3, 50),
    "electric_heaters": CategorySpec(0.3, 2, 30),
    "ev_chargers": CategorySpec(0.45, 11, 80),
    "hot_water_tanks": CategorySpec(0.3, 2, 25),
    "inductive_power": CategorySpec(0.15, 5, 60),
    "flow_type_heaters": CategorySpec(0.25, 18, 100),
    "public_lighting": CategorySpec(0.4, 0.5, 8),
    "other_consumers": CategorySpec(0.35, 2, 40),
    "batteries": CategorySpec(0.45, 2, 30),
    "pv_systems": CategorySpec(0.7, 5, 150),
    "other_producers": CategorySpec(0.1, 5, 50),
    "g0": CategorySpec(0.35, 5, 150),
    "g1": CategorySpec(0.3, 10, 300),
    "g2": CategorySpec(0.1, 5, 150),
    "g3": CategorySpec(0.1, 5, 200),
    "g4": CategorySpec(0.2, 5, 100),
    "g5": CategorySpec(0.05, 10, 150),
    "g6": CategorySpec(0.05, 5, 100),
    "l0": CategorySpec(0.1, 5, 200),
}


@dataclass
class GeneratorConfig:
    seed: int = 2024
    n_feeders: int = 200
    start: dt.date = dt.date(2023, 1, 1)
    end: dt.date = dt.date(2023, 4, 30)  # inclusive
    category_prevalence: dict = field(default_factory=lambda: dict(DEFAULT_PREVALENCE))
    noise_level: float = 0.1
    gap_rate: float = 0.01
    latitude: float = 48.8
    mean_temperature: float = 9.5

    def __post_init__(self):
        if isinstance(self.start, str):
            self.start = dt.date.fromisoformat(self.start)
        if isinstance(self.end, str):
            self.end = dt.date.fromisoformat(self.end)
        prevalence = dict(DEFAULT_PREVALENCE)
        for name, spec in self.category_prevalence.items():
            prevalence[name] = spec if isinstance(spec, CategorySpec) else CategorySpec(**spec)
        self.category_prevalence = prevalence

    def validate(self) -> None:
        if self.end < self.start:
            raise ConfigError(f"period {self.start}..{self.end} is shorter than one day")
        if self.n_feeders < 1:
            raise ConfigError("n_feeders must be >= 1")
        if not 0 <= self.gap_rate <= 0.5:
            raise ConfigError(f"gap_rate {self.gap_rate} outside [0, 0.5]")
        if self.noise_level < 0:
            raise ConfigError("noise_level must be >= 0")
        unknown = set(self.category_prevalence) - set(METADATA_FIELDS)
        if unknown:
            raise ConfigError(f"unknown metadata categories {sorted(unknown)}")
        for name, spec in self.category_prevalence.items():
            if not 0 <= spec.prevalence <= 1:
                raise ConfigError(f"{name}: prevalence {spec.prevalence} outside [0, 1]")
            if spec.low < 0 or spec.high < spec.low:
                raise ConfigError(f"{name}: magnitude range [{spec.low}, {spec.high}] invalid")

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid.for_days(self.start, self.end)


def feeder_id(i: int) -> str:
    return f"F{i + 1:04d}"


# --- calendar -----------------------------------------------------------------


def holidays_bw(year: int) -> set[dt.date]:
    """Public holidays of Baden-Wuerttemberg."""
    e = easter(year)
    fixed = [(1, 1), (1, 6), (5, 1), (10, 3), (11, 1), (12, 25), (12, 26)]
    moving = [-2, 1, 39, 50, 60]
    return {dt.date(year, m, d) for m, d in fixed} | {e + dt.timedelta(days=k) for k in moving}


def generate_calendar(first: dt.date, last: dt.date) -> list[CalendarDay]:
    hol = set()
    for year in range(first.year, last.year + 1):
        hol |= holidays_bw(year)
    days = []
    d = first
    while d <= last:
        is_holiday = d in hol
        days.append(CalendarDay(d, is_holiday, d.weekday() < 5 and not is_holiday))
        d += dt.timedelta(days=1)
    return days


# --- weather ------------------------------------------------------------------


def clear_sky_radiation(grid: TimeGrid, latitude: float) -> np.ndarray:
    """Haurwitz clear-sky global radiation (W/m^2) from a simple solar
    geometry; local clock time is offset from solar time by 0.4 h."""
    ts = grid.timestamps()
    doy = (ts.astype("datetime64[D]") - ts.astype("datetime64[Y]")).astype(int) + 1
    hour = grid.minute_of_day() / 60.0 + 7.5 / 60.0  # centre of the 15-min interval
    decl = np.deg2rad(23.44) * np.sin(2 * np.pi * (284 + doy) / 365.0)
    hour_angle = np.deg2rad(15.0 * (hour - 0.4 - 12.0))
    lat = np.deg2rad(latitude)
    sin_elev = np.sin(lat) * np.sin(decl) + np.cos(lat) * np.cos(decl) * np.cos(hour_angle)
    s = np.clip(sin_elev, 0.0, None)
    ghi = np.where(s > 0.01, 1098.0 * s * np.exp(-0.057 / np.maximum(s, 0.01)), 0.0)
    return np.minimum(ghi, CLEAR_SKY_MAX_WM2)


def generate_weather(seed: int, first: dt.date, last: dt.date, latitude=48.8, mean_temperature=9.5) -> WeatherSeries:
    grid = TimeGrid.for_days(first, last)
    rng = np.random.default_rng([seed, 0])
    n_days = grid.n_steps // STEPS_PER_DAY
    day = grid.day_number()
    hour = grid.minute_of_day() / 60.0

    # daily cloudiness: AR(1) in logit space, mapped to [0, 1]
    z = np.empty(n_days)
    z[0] = rng.normal()
    eps = rng.normal(size=n_days)
    for d in range(1, n_days):
        z[d] = 0.6 * z[d - 1] + 0.8 * eps[d]
    cloud = 1.0 / (1.0 + np.exp(-1.5 * z))
    intraday = np.clip(rng.normal(1.0, 0.15, grid.n_steps), 0.6, 1.4)
    # transmission stays within [0.35, 1]
    transmission = 1.0 - 0.65 * np.clip(cloud[day] * intraday, 0.0, 1.0)
    radiation = clear_sky_radiation(grid, latitude) * transmission

    ts = grid.timestamps()
    doy = (ts.astype("datetime64[D]") - ts.astype("datetime64[Y]")).astype(int) + 1
    seasonal = mean_temperature - 9.5 * np.cos(2 * np.pi * (doy - 20) / 365.25)
    anomaly = np.empty(n_days)
    anomaly[0] = rng.normal(0, 2.0)
    a_eps = rng.normal(0, 1.6, n_days)
    for d in range(1, n_days):
        anomaly[d] = 0.75 * anomaly[d - 1] + a_eps[d]
    daily_amp = 2.5 + 3.0 * (1.0 - cloud[day])
    temperature = (
        seasonal + anomaly[day] + daily_amp * np.sin(2 * np.pi * (hour - 9.0) / 24.0)
        + rng.normal(0, 0.3, grid.n_steps)
    )

    wet = (cloud[day] > 0.6) & (rng.random(grid.n_steps) < 0.15)
    precipitation = np.where(wet, rng.exponential(0.3, grid.n_steps), 0.0)

    snow = np.empty(grid.n_steps)
    level = 0.0
    for j in range(grid.n_steps):
        if temperature[j] < 0.5:
            level += precipitation[j]
        else:
            level = max(0.0, level - 0.05 * temperature[j])
        snow[j] = level
    q = lambda a: np.round(a, CSV_DECIMALS)  # noqa: E731
    return WeatherSeries(grid, q(radiation), q(temperature), q(precipitation), q(snow))


# --- component templates -------------------------------------------------------


def _bell(hour, centre, width):
    d = (hour - centre + 12.0) % 24.0 - 12.0
    return np.exp(-0.5 * (d / width) ** 2)


def _plateau(hour, start, end, ramp=0.4):
    rise = 1.0 / (1.0 + np.exp(-(hour - start) / ramp))
    fall = 1.0 / (1.0 + np.exp((hour - end) / ramp))
    return rise * fall


@dataclass(frozen=True)
class TimeContext:
    """Per-index calendar/weather arrays the component templates consume."""

    grid: TimeGrid
    hour: np.ndarray
    dow: np.ndarray
    workday: np.ndarray
    holiday: np.ndarray
    day: np.ndarray
    temperature: np.ndarray
    daily_temperature: np.ndarray
    radiation: np.ndarray

    @classmethod
    def build(cls, weather: WeatherSeries, calendar: list[CalendarDay]) -> "TimeContext":
        grid = weather.grid
        day = grid.day_number()
        dates = grid.dates()
        by_date = {c.date: c for c in calendar}
        missing = [d for d in dates if d not in by_date]
        if missing:
            raise ValueError(f"calendar lacks {len(missing)} dates, first {missing[0]}")
        workday = np.array([by_date[d].is_workday for d in dates])[day]
        holiday = np.array([by_date[d].is_holiday for d in dates])[day]
        dow = np.array([d.weekday() for d in dates])[day]
        t = weather.air_temperature
        daily_mean = np.bincount(day, weights=t) / np.bincount(day)
        return cls(
            grid, grid.minute_of_day() / 60.0, dow, workday, holiday, day, t, daily_mean[day],
            weather.global_radiation,
        )


COMMERCE_TEMPLATES = {
    "g0": lambda c: 0.25 + 0.75 * _plateau(c.hour, 7, 19) * c.workday
    + 0.2 * _plateau(c.hour, 8, 14) * ((c.dow == 5) & ~c.holiday),
    "g1": lambda c: 0.1 + 0.9 * _plateau(c.hour, 8, 18) * c.workday,
    "g2": lambda c: 0.15 + 0.85 * _plateau(c.hour, 17, 23),
    "g3": lambda c: 1.0 + 0.05 * np.cos(2 * np.pi * c.hour / 24.0),
    "g4": lambda c: 0.1 + (0.9 * _plateau(c.hour, 9, 19) - 0.3 * _bell(c.hour, 13, 0.6))
    * ((c.dow <= 5) & ~c.holiday),
    "g5": lambda c: 0.15 + 0.85 * _plateau(c.hour, 3, 13) * ((c.dow <= 5) & ~c.holiday)
    + 0.5 * _plateau(c.hour, 6, 11) * ((c.dow == 6) | c.holiday),
    "g6": lambda c: 0.1 + 0.9 * _plateau(c.hour, 10, 22) * ((c.dow >= 5) | c.holiday),
    "l0": lambda c: 0.3 + 0.7 * (_bell(c.hour, 6.5, 1.0) + _bell(c.hour, 18.0, 1.0)),
}


def _cold(temperature, threshold, span):
    return np.clip((threshold - temperature) / span, 0.0, 1.0)


@dataclass(frozen=True)
class FeederTraits:
    """Latent per-feeder behaviour not visible in the metadata."""

    household_scale: float
    household_shift_h: float
    pv_orientation: float
    heat_pump_threshold: float
    storage_start_h: float
    storage_duration_h: float
    ev_daily: np.ndarray
    day_factor: np.ndarray
    step_noise: np.ndarray

    @classmethod
    def draw(cls, rng: np.random.Generator, n_days: int, n_steps: int, noise_level: float) -> "FeederTraits":
        # fixed draw order: every draw happens regardless of the metadata
        sigma = noise_level
        return cls(
            household_scale=float(rng.lognormal(0.0, 0.2)),
            household_shift_h=float(rng.normal(0.0, 0.5)),
            pv_orientation=float(rng.uniform(0.75, 1.0)),
            heat_pump_threshold=float(rng.normal(15.0, 1.5)),
            storage_start_h=float(rng.uniform(0.0, 1.5)),
            storage_duration_h=float(rng.uniform(5.0, 7.0)),
            ev_daily=rng.uniform(0.3, 1.0, n_days),
            day_factor=np.exp(rng.normal(0.0, sigma / 2, n_days) - sigma**2 / 8),
            step_noise=np.exp(rng.normal(0.0, sigma, n_steps) - sigma**2 / 2),
        )


def consumption_components(meta: FeederMetadata, ctx: TimeContext, traits: FeederTraits) -> dict[str, np.ndarray]:
    """Noise-free consumption (kW, >= 0) per non-zero category."""
    h = ctx.hour
    weekend_shift = np.where(ctx.workday, 0.0, 1.5)
    cold = _cold(ctx.daily_temperature, 16.0, 20.0)
    out = {}
    if meta.housing_units:
        per_unit = (
            0.12
            + 0.2 * _bell(h, 7.0 + weekend_shift + traits.household_shift_h, 1.0)
            + 0.15 * _bell(h, 12.5, 1.2)
            + 0.42 * _bell(h, 19.0 + traits.household_shift_h, 1.8)
        ) * (1.0 + 0.3 * cold)
        out["housing_units"] = meta.housing_units * traits.household_scale * per_unit
    if meta.heat_pumps:
        load = 0.55 * _cold(ctx.temperature, traits.heat_pump_threshold, 25.0) * (1.0 + 0.2 * _bell(h, 7.0, 2.0))
        out["heat_pumps"] = meta.heat_pumps * load
    if meta.storage_heaters:
        start = traits.storage_start_h
        block = _plateau(h, start, start + traits.storage_duration_h, ramp=0.15)
        out["storage_heaters"] = meta.storage_heaters * 0.8 * _cold(ctx.daily_temperature, 14.0, 18.0) * block
    if meta.electric_heaters:
        out["electric_heaters"] = meta.electric_heaters * 0.35 * cold * _plateau(h, 6, 22)
    if meta.ev_chargers:
        amp = traits.ev_daily[ctx.day]
        evening = 0.35 * _bell(h, 19.5, 1.5)
        midday = 0.2 * _bell(h, 13.0, 2.0) * ~ctx.workday
        out["ev_chargers"] = meta.ev_chargers * amp * (evening + midday)
    if meta.hot_water_tanks:
        night = _plateau(h, 22, 24.5) + _plateau(h, -0.5, 5)
        out["hot_water_tanks"] = meta.hot_water_tanks * 0.6 * night
    if meta.inductive_power:
        out["inductive_power"] = meta.inductive_power * (0.05 + 0.4 * _plateau(h, 7, 17) * ctx.workday)
    if meta.flow_type_heaters:
        out["flow_type_heaters"] = meta.flow_type_heaters * 0.08 * (_bell(h, 7.0, 0.7) + _bell(h, 20.0, 1.0))
    if meta.public_lighting:
        out["public_lighting"] = meta.public_lighting * (ctx.radiation < LIGHTING_RADIATION_WM2)
    if meta.other_consumers:
        out["other_consumers"] = meta.other_consumers * (0.3 + 0.1 * _bell(h, 12.0, 4.0))
    n_days = ctx.day[-1] + 1
    for name in COMMERCE_FIELDS:
        kwh_per_day = getattr(meta, name)
        if kwh_per_day:
            shape = COMMERCE_TEMPLATES[name](ctx) * (1.0 + 0.1 * cold)
            mean_daily_kwh = shape.sum() * STEP_HOURS / n_days
            out[name] = kwh_per_day * shape / mean_daily_kwh
    return out


def production_components(meta: FeederMetadata, ctx: TimeContext, traits: FeederTraits) -> dict[str, np.ndarray]:
    """Generation as negative kW; each bounded below by minus its installed power."""
    out = {}
    if meta.pv_systems:
        normalized = np.clip(ctx.radiation / CLEAR_SKY_MAX_WM2, 0.0, 1.0)
        out["pv_systems"] = -meta.pv_systems * PV_EFFICIENCY * traits.pv_orientation * normalized
    if meta.other_producers:
        cold = _cold(ctx.daily_temperature, 16.0, 20.0)
        out["other_producers"] = -meta.other_producers * (0.3 + 0.5 * cold) * (0.6 + 0.4 * _plateau(ctx.hour, 6, 22))
    return out


def apply_battery(net: np.ndarray, power_kw: float, ctx: TimeContext) -> np.ndarray:
    """Daily battery cycle: absorb feed-in up to power/capacity limits, then
    discharge into evening consumption. Never changes the sign of any value."""
    if power_kw <= 0:
        return net
    capacity = BATTERY_HOURS * power_kw
    out = net.copy()
    late = ctx.hour >= BATTERY_DISCHARGE_FROM_H
    for d in range(ctx.day[-1] + 1):
        sl = slice(d * STEPS_PER_DAY, (d + 1) * STEPS_PER_DAY)
        x = net[sl]
        want = np.minimum(np.clip(-x, 0.0, None), power_kw) * STEP_HOURS
        stored = np.minimum(np.cumsum(want), capacity)
        charge = np.diff(stored, prepend=0.0) / STEP_HOURS
        available = stored[-1] * BATTERY_EFFICIENCY
        give = np.where(late[sl], np.minimum(np.clip(x, 0.0, None), power_kw), 0.0) * STEP_HOURS
        given = np.minimum(np.cumsum(give), available)
        discharge = np.diff(given, prepend=0.0) / STEP_HOURS
        out[sl] = x + charge - discharge
    return out


def simulate_feeder(meta: FeederMetadata, ctx: TimeContext, rng: np.random.Generator, noise_level: float) -> np.ndarray:
    """Gap-free ground-truth active power (kW) of one feeder."""
    n_steps = ctx.grid.n_steps
    traits = FeederTraits.draw(rng, int(ctx.day[-1]) + 1, n_steps, noise_level)
    consumption = np.zeros(n_steps)
    for series in consumption_components(meta, ctx, traits).values():
        consumption += series
    consumption *= traits.day_factor[ctx.day] * traits.step_noise
    net = consumption
    for series in production_components(meta, ctx, traits).values():
        net = net + series
    return apply_battery(net, meta.batteries, ctx)


def draw_metadata(rng: np.random.Generator, prevalence: dict[str, CategorySpec]) -> FeederMetadata:
    values = {}
    for name in METADATA_FIELDS:
        spec = prevalence[name]
        present = rng.random() < spec.prevalence
        magnitude = rng.uniform(spec.low, spec.high)
        # quantised to the precision of the metadata file
        magnitude = round(magnitude) if name == "housing_units" else round(magnitude, CSV_DECIMALS)
        values[name] = magnitude if present else 0
    return FeederMetadata(**values)


def generate_dataset(config: GeneratorConfig) -> Dataset:
    config.validate()
    weather = generate_weather(config.seed, config.start, config.end, config.latitude, config.mean_temperature)
    calendar = generate_calendar(config.start, config.end)
    ctx = TimeContext.build(weather, calendar)
    feeders, measurements = {}, {}
    for i in range(config.n_feeders):
        rng = np.random.default_rng([config.seed, 1, i])
        fid = feeder_id(i)
        meta = draw_metadata(rng, config.category_prevalence)
        truth = simulate_feeder(meta, ctx, rng, config.noise_level)
        gaps = rng.random(weather.grid.n_steps) < config.gap_rate
        feeders[fid] = meta
        values = np.where(gaps, np.nan, np.round(truth, CSV_DECIMALS))
        measurements[fid] = MeasurementSeries(fid, weather.grid, values)
    return Dataset(weather.grid, feeders, measurements, weather, calendar)
