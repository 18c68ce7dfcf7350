import datetime as dt

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from feederlab.domain import AlignmentError, FeederMetadata, MeasurementSeries, TimeGrid
from feederlab.io import Dataset
from feederlab.prep import (
    CleaningConfig,
    JoinError,
    SampleTable,
    aggregate_to_15min,
    build_samples,
    check_feeder,
    clean_dataset,
    encode_grid,
    encode_timestamp,
    filter_feeders,
    write_cleaning_report,
)

GRID = TimeGrid(dt.datetime(2023, 3, 6), 2 * 96)  # Monday, two days
CFG = CleaningConfig()
HOUSES = FeederMetadata(housing_units=10)
PV_ONLY = FeederMetadata(housing_units=10, pv_systems=10)


def series(values):
    return MeasurementSeries("X", GRID, np.asarray(values, dtype=float))


def flat(v=8.0):
    return np.full(GRID.n_steps, v)


def at(hour, minute=0, day=0):
    return day * 96 + hour * 4 + minute // 15


# --- aggregation ------------------------------------------------------------------


def test_aggregate_constant_and_mean():
    t0 = np.datetime64("2023-03-06T00:00")
    ts = t0 + np.arange(30).astype("timedelta64[m]")
    s = aggregate_to_15min(ts, np.r_[np.full(15, 4.0), np.arange(15.0)])
    assert s.grid.n_steps == 2 and s.grid.start == dt.datetime(2023, 3, 6)
    assert s.values.tolist() == [4.0, 7.0]


def test_aggregate_missing_bin_is_gap():
    t0 = np.datetime64("2023-03-06T00:00")
    ts = np.r_[t0 + np.arange(15), t0 + 30 + np.arange(15)].astype("datetime64[m]")
    vals = np.r_[np.ones(15), np.full(15, 2.0)]
    s = aggregate_to_15min(ts, vals, "X")
    assert s.values[0] == 1.0 and np.isnan(s.values[1]) and s.values[2] == 2.0


def test_aggregate_ignores_missing_minutes_and_grid_bounds():
    t0 = np.datetime64("2023-03-06T00:00")
    ts = t0 + np.arange(15).astype("timedelta64[m]")
    vals = np.r_[np.full(14, 3.0), np.nan]
    assert aggregate_to_15min(ts, vals, grid=GRID).values[0] == 3.0
    with pytest.raises(AlignmentError):
        aggregate_to_15min(ts - np.timedelta64(60, "m"), vals, grid=GRID)


# --- cleaning rules -------------------------------------------------------------------


def test_plausible_feeder_passes():
    assert check_feeder(HOUSES, series(flat()), CFG) is None


def test_rule_a_count():
    y = np.full(GRID.n_steps, np.nan)
    y[:95] = 8.0
    assert check_feeder(HOUSES, series(y), CFG) == "a"
    y[95] = 8.0
    assert check_feeder(HOUSES, series(y), CFG) is None
    assert check_feeder(HOUSES, None, CFG) == "a"


@pytest.mark.parametrize("peak, rule", [(4.9, "b"), (5.0, "b"), (5.01, None), (-5.01, None), (-4.9, "b")])
def test_rule_b_strict(peak, rule):
    y = flat(1.0)
    y[at(12)] = peak
    meta = FeederMetadata(housing_units=1, pv_systems=20)
    assert check_feeder(meta, series(y), CFG) == rule


def test_rule_c_category_limit():
    assert check_feeder(FeederMetadata(heat_pumps=400.5), series(flat()), CFG) == "c"
    assert check_feeder(FeederMetadata(heat_pumps=400), series(flat()), CFG) is None
    # counts (housing units) are not installed power
    assert check_feeder(FeederMetadata(housing_units=500), series(flat()), CFG) is None


def test_rule_d_missing_metadata():
    assert check_feeder(FeederMetadata(), series(flat()), CFG) == "d"
    assert check_feeder(None, series(flat()), CFG) == "d"


def test_rule_e_feed_in_margin():
    y = flat()
    y[at(12)] = -15.0
    assert check_feeder(PV_ONLY, series(y), CFG) is None
    y[at(12)] = -15.01
    assert check_feeder(PV_ONLY, series(y), CFG) == "e"
    with_battery = FeederMetadata(housing_units=10, pv_systems=10, batteries=5)
    assert check_feeder(with_battery, series(y), CFG) is None


def test_rule_f_night_feed_in():
    y = flat()
    y[at(1)] = -2.0
    assert check_feeder(PV_ONLY, series(y), CFG) == "f"
    for meta in (FeederMetadata(housing_units=10, pv_systems=10, batteries=3),
                 FeederMetadata(housing_units=10, pv_systems=10, other_producers=20),
                 HOUSES.__class__(housing_units=10, heat_pumps=5)):
        # a second producer (or none at all) exempts the feeder
        assert check_feeder(meta, series(np.where(np.arange(GRID.n_steps) == at(1), -2.0, 8.0)), CFG) in (None, "e")
    z = flat()
    z[at(2)] = -2.0  # 02:00 is outside the window
    assert check_feeder(PV_ONLY, series(z), CFG) is None
    z[at(1, 45, day=1)] = -0.5
    assert check_feeder(PV_ONLY, series(z), CFG) == "f"


def _dataset(feeders: dict, values: dict, grid=GRID):
    from feederlab.datagen import generate_calendar, generate_weather

    weather = generate_weather(0, grid.start.date(), grid.end.date())
    return Dataset(grid, feeders, {k: MeasurementSeries(k, grid, v) for k, v in values.items()}, weather,
                   generate_calendar(grid.start.date(), grid.end.date()))


def test_filter_report_and_idempotence(tmp_path):
    y_small = flat(1.0)
    ds = _dataset({"A": HOUSES, "B": HOUSES, "C": FeederMetadata()}, {"A": flat(), "B": y_small, "C": flat()})
    kept, report = filter_feeders(ds)
    assert kept == ["A"] and report.failed_rule == {"A": None, "B": "b", "C": "d"}
    assert report.removed_counts() == {"a": 0, "b": 1, "c": 0, "d": 1, "e": 0, "f": 0}
    cleaned, _ = clean_dataset(ds)
    again, report2 = clean_dataset(cleaned)
    assert again.feeder_ids == cleaned.feeder_ids == ["A"] and report2.kept == ["A"]
    write_cleaning_report(tmp_path / "r.csv", report)
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "feeder_id,kept,failed_rule,reason"


def test_filter_rejects_grid_mismatch():
    ds = _dataset({"A": HOUSES}, {"A": flat()})
    other = TimeGrid(GRID.start, GRID.n_steps - 1)
    ds.measurements["A"] = MeasurementSeries("A", other, np.full(other.n_steps, 8.0))
    with pytest.raises(AlignmentError):
        filter_feeders(ds)


def test_generated_dataset_cleaning_is_idempotent(small_dataset):
    cleaned, _ = clean_dataset(small_dataset)
    assert clean_dataset(cleaned)[0].feeder_ids == cleaned.feeder_ids


# --- timestamp encoding -------------------------------------------------------


def test_encode_examples():
    midnight = encode_timestamp(dt.datetime(2023, 3, 6, 0, 0))
    assert midnight[4:] == (0.0, 1.0)
    noon = encode_timestamp(dt.datetime(2023, 3, 6, 12, 0))
    assert abs(noon[4]) < 1e-12 and abs(noon[5] + 1) < 1e-12
    monday = encode_timestamp(dt.datetime(2023, 3, 6, 7, 30))
    next_monday = encode_timestamp(dt.datetime(2023, 3, 13, 7, 30))
    assert monday[2:] == next_monday[2:] and monday[:2] != next_monday[:2]
    assert monday[2:4] == (0.0, 1.0)  # Monday is day-of-week 0


@given(st.datetimes(min_value=dt.datetime(1990, 1, 1), max_value=dt.datetime(2090, 1, 1)))
def test_encoding_on_unit_circle(t):
    t = t.replace(minute=t.minute // 15 * 15, second=0, microsecond=0)
    e = encode_timestamp(t)
    for k in (0, 2, 4):
        assert abs(e[k] ** 2 + e[k + 1] ** 2 - 1) < 1e-12


def test_grid_encoding_matches_scalar():
    g = TimeGrid(dt.datetime(2024, 2, 27, 21, 0), 500)  # crosses the leap day
    enc = encode_grid(g)
    for j in range(0, 500, 37):
        np.testing.assert_allclose(enc[j], encode_timestamp(g.index_to_timestamp(j)), atol=1e-15)


# --- samples ---------------------------------------------------------------------


def test_sample_cardinality_and_gaps():
    y = flat()
    y[5] = np.nan
    ds = _dataset({"A": HOUSES, "B": PV_ONLY}, {"A": flat(), "B": y})
    table = build_samples(ds)
    assert len(table) == 2 * GRID.n_steps - 1
    assert table.X.shape[1] == 33
    assert 5 not in table.index[table.feeder_ids == "B"]
    rows = list(table.rows())
    assert all(len(r.features) == 33 for r in rows)
    # canonical order: metadata, weather, encoding, calendar
    first = rows[0]
    assert first.features.metadata == tuple(HOUSES.as_array())
    assert first.features.timestamp_encoding == encode_timestamp(GRID.start)
    assert first.features.calendar_flags == (0.0, 1.0)  # a plain Monday


def test_two_feeders_one_day_gives_192_samples():
    grid = TimeGrid(dt.datetime(2023, 3, 6), 96)
    ds = _dataset({"A": HOUSES, "B": HOUSES}, {"A": np.full(96, 8.0), "B": np.full(96, 6.0)}, grid)
    assert len(build_samples(ds)) == 192


def test_missing_calendar_day_is_join_error():
    ds = _dataset({"A": HOUSES}, {"A": flat()})
    ds.calendar = ds.calendar[:1]
    with pytest.raises(JoinError):
        build_samples(ds)


def test_sample_csv_round_trip(tmp_path, clean_small):
    table = build_samples(clean_small)
    sub = table.subset(table.feeders()[:2])
    sub.to_csv(tmp_path / "s.csv")
    header = (tmp_path / "s.csv").read_text().split("\n", 1)[0].split(",")
    assert header == ["feeder_id", "timestamp"] + [f"f{k}" for k in range(33)] + ["target_kw"]
    back = SampleTable.from_csv(tmp_path / "s.csv", clean_small.grid)
    assert np.array_equal(back.X, sub.X) and np.array_equal(back.y, sub.y)
    assert np.array_equal(back.index, sub.index) and list(back.feeder_ids) == list(sub.feeder_ids)
