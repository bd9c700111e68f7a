"""Data module: repair rules, normalization, windows, splits, ranking, I/O."""

import math

import numpy as np
import pytest

import pvcast.data as d
from pvcast.errors import ValidationError

NA = float("nan")


def _grid(n, step=300, start="2024-06-01T00:00:00"):
    t0 = np.datetime64(start, "s")
    return t0 + np.arange(n) * np.timedelta64(step, "s")


def _day_series(day_values, step=3600):
    """One or more 24-sample days at hourly step."""
    flat = np.concatenate(day_values)
    return d.TimeSeries(_grid(len(flat), step=step), flat, name="pv")


def _bell_day(peak=10.0):
    v = np.zeros(24)
    v[6:18] = peak * np.sin(np.linspace(0, np.pi, 12))
    return v


# ---------------------------------------------------------------------------
# Grid validation
# ---------------------------------------------------------------------------


def test_timeseries_rejects_nonconstant_step():
    t = _grid(5).copy()
    t[3] += np.timedelta64(60, "s")
    with pytest.raises(ValidationError):
        d.TimeSeries(t, np.zeros(5))


def test_timeseries_rejects_decreasing():
    t = _grid(5)[::-1].copy()
    with pytest.raises(ValidationError):
        d.TimeSeries(t, np.zeros(5))


# ---------------------------------------------------------------------------
# Repair rules
# ---------------------------------------------------------------------------


def test_rule1_zero_fills_leading_gap_with_near_zero_context():
    day = _bell_day()
    day[:3] = NA  # night samples, first known neighbor is 0.0 < 1% of peak
    series = _day_series([day])
    repaired, report = d.repair_missing(series)
    assert report.zero_filled == 3
    assert report.interpolated == 0
    assert report.dropped_days == []
    np.testing.assert_array_equal(repaired.values[:3], 0.0)
    assert not np.isnan(repaired.values).any()


def test_rule1_trailing_gap():
    day = _bell_day()
    day[-2:] = NA
    repaired, report = d.repair_missing(_day_series([day]))
    assert report.zero_filled == 2
    np.testing.assert_array_equal(repaired.values[-2:], 0.0)


def test_rule1_rejects_nonzero_context():
    day = _bell_day()
    day[:7] = NA  # nearest known neighbor is mid-morning, well above threshold
    repaired, report = d.repair_missing(_day_series([day]))
    assert report.dropped_days == ["2024-06-01"]
    assert np.isnan(repaired.values[:7]).all()  # dropped day untouched


def test_rule2_interior_gap_of_one():
    day = _bell_day()
    i = 10
    expected = 0.5 * (day[i - 1] + day[i + 1])
    day[i] = NA
    repaired, report = d.repair_missing(_day_series([day]))
    assert report.interpolated == 1
    assert repaired.values[i] == pytest.approx(expected, abs=1e-12)


def test_rule2_interior_gap_of_two_matches_linear_formula():
    # x1=0, x2=3 with two missing points: n = 3, fills are 1 and 2
    day = np.full(24, 5.0)
    day[0] = day[-1] = 5.0
    day[10] = 0.0
    day[11] = NA
    day[12] = NA
    day[13] = 3.0
    repaired, report = d.repair_missing(_day_series([day]))
    assert report.interpolated == 2
    assert repaired.values[11] == pytest.approx(1.0, abs=1e-12)
    assert repaired.values[12] == pytest.approx(2.0, abs=1e-12)


def test_rule3_long_interior_gap_drops_day():
    day = _bell_day()
    day[9:12] = NA  # three samples
    repaired, report = d.repair_missing(_day_series([day]))
    assert report.dropped_days == ["2024-06-01"]
    assert report.interpolated == 0 and report.zero_filled == 0


def test_rule3_entire_day_missing():
    day1 = _bell_day()
    day2 = np.full(24, NA)
    day3 = _bell_day()
    repaired, report = d.repair_missing(_day_series([day1, day2, day3]))
    assert report.dropped_days == ["2024-06-02"]
    assert np.isnan(repaired.values[24:48]).all()
    assert not np.isnan(repaired.values[:24]).any()


def test_repair_is_idempotent():
    day = _bell_day()
    day[:2] = NA
    day[10] = NA
    once, report1 = d.repair_missing(_day_series([day]))
    twice, report2 = d.repair_missing(once)
    np.testing.assert_array_equal(once.values, twice.values)
    assert report2.zero_filled == 0 and report2.interpolated == 0


def test_repair_dataset_excises_dropped_days():
    day1, day2 = _bell_day(), _bell_day()
    day2[8:13] = NA
    pv = np.concatenate([day1, day2])
    t = _grid(48, step=3600)
    ds = d.AlignedDataset(t, pv, {"temp": np.linspace(0, 1, 48)})
    out, report = d.repair_dataset(ds)
    assert report.dropped_days == ["2024-06-02"]
    assert len(out) == 24
    assert out.timestamps[-1] < np.datetime64("2024-06-02T00:00:00", "s")


def test_repair_dataset_fills_weather_gaps():
    pv = _bell_day()
    w = np.linspace(0.0, 23.0, 24)
    w[5] = NA
    ds = d.AlignedDataset(_grid(24, step=3600), pv, {"temp": w})
    out, report = d.repair_dataset(ds)
    assert report.weather_filled == 1
    assert out.channels["temp"][5] == pytest.approx(5.0, abs=1e-12)


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------


def test_zscore_hand_example_population_std():
    stats = d.zscore_fit({"a": np.array([0.0, 2.0])})
    assert stats.mean["a"] == 1.0
    assert stats.std["a"] == 1.0  # population std, not sample std


def test_zscore_round_trip():
    rng = np.random.default_rng(3)
    arrays = {"a": rng.normal(5, 3, 200), "b": rng.uniform(-2, 9, 200)}
    stats = d.zscore_fit(arrays)
    back = d.zscore_invert(d.zscore_apply(arrays, stats), stats)
    for k in arrays:
        assert np.max(np.abs(back[k] - arrays[k])) < 1e-10


def test_zscore_flags_constant_channel():
    stats = d.zscore_fit({"c": np.full(10, 4.2)})
    assert stats.constant == ("c",)
    out = d.zscore_apply({"c": np.full(10, 4.2)}, stats)
    np.testing.assert_array_equal(out["c"], 0.0)


def test_zscore_normalized_moments():
    rng = np.random.default_rng(11)
    arrays = {"x": rng.gamma(2.0, 3.0, 500)}
    normed = d.zscore_apply(arrays, d.zscore_fit(arrays))["x"]
    assert abs(normed.mean()) < 1e-12
    assert abs(normed.std() - 1.0) < 1e-12


def test_normstats_dict_round_trip():
    stats = d.zscore_fit({"a": np.arange(5.0), "c": np.ones(5)})
    again = d.NormStats.from_dict(stats.to_dict())
    assert again.mean == stats.mean and again.std == stats.std
    assert again.constant == stats.constant


# ---------------------------------------------------------------------------
# Windows and splits
# ---------------------------------------------------------------------------


def _tiny_ds(n, step=300):
    return d.AlignedDataset(_grid(n, step=step), np.arange(n, dtype=float), {"w": np.arange(n) * 2.0})


def test_window_counts():
    ds13 = _tiny_ds(13)
    ws = d.make_windows(ds13, np.zeros(13), np.zeros(13), lookback=12)
    assert len(ws) == 1
    ds100 = _tiny_ds(100)
    ws = d.make_windows(ds100, np.zeros(100), np.zeros(100), lookback=12)
    assert len(ws) == 88


def test_window_contents_and_alignment():
    n = 20
    ds = _tiny_ds(n)
    high = np.arange(n) + 100.0
    low = np.arange(n) + 200.0
    ws = d.make_windows(ds, high, low, lookback=3)
    w0 = ws[0]
    np.testing.assert_array_equal(w0.inputs_high[:, 0], [100.0, 101.0, 102.0])
    np.testing.assert_array_equal(w0.inputs_low[:, 0], [200.0, 201.0, 202.0])
    np.testing.assert_array_equal(w0.inputs_weather[:, 0], [0.0, 2.0, 4.0])
    assert w0.target == 3.0  # pv row right after the lookback block
    assert w0.target_time == ds.timestamps[3]


def test_windows_skip_timestamp_seams():
    # two contiguous blocks separated by an excised day
    t = np.concatenate([_grid(30), _grid(30, start="2024-06-03T00:00:00")])
    pv = np.arange(60, dtype=float)
    ds = d.AlignedDataset(t, pv, {})
    ws = d.make_windows(ds, pv, pv, lookback=12)
    # each block alone yields 30 - 12 = 18 windows; nothing spans the seam
    assert len(ws) == 36
    steps = np.diff(ds.timestamps).astype("timedelta64[s]").astype(int)
    assert (np.array(sorted(set(steps))) > 0).all()


def test_window_too_short_raises():
    ds = _tiny_ds(12)
    with pytest.raises(ValidationError):
        d.make_windows(ds, np.zeros(12), np.zeros(12), lookback=12)


def test_split_sizes():
    for n, expected in [(100, (80, 10, 10)), (10, (8, 1, 1)), (12, (10, 1, 1))]:
        ds = _tiny_ds(n + 3)
        ws = d.make_windows(ds, np.zeros(n + 3), np.zeros(n + 3), lookback=3)
        assert len(ws) == n
        parts = d.split_windows(ws)
        assert tuple(len(p) for p in parts) == expected


def test_split_is_chronological():
    ds = _tiny_ds(103)
    ws = d.make_windows(ds, np.zeros(103), np.zeros(103), lookback=3)
    train, val, test = d.split_windows(ws)
    assert train.times[-1] < val.times[0] <= val.times[-1] < test.times[0]


def test_split_rejects_bad_ratios():
    ds = _tiny_ds(50)
    ws = d.make_windows(ds, np.zeros(50), np.zeros(50), lookback=3)
    with pytest.raises(ValidationError):
        d.split_windows(ws, (0.5, 0.2, 0.2))


# ---------------------------------------------------------------------------
# Pearson and feature selection
# ---------------------------------------------------------------------------


def test_pearson_hand_example():
    r = d.pearson(np.array([1.0, 2, 3, 4]), np.array([1.0, 2, 4, 3]))
    assert r == pytest.approx(0.8, abs=1e-12)


def test_pearson_perfect_and_sign():
    x = np.linspace(0, 1, 50)
    assert d.pearson(x, 3 * x + 1) == pytest.approx(1.0, abs=1e-12)
    assert d.pearson(x, -2 * x) == pytest.approx(-1.0, abs=1e-12)


def test_pearson_constant_raises():
    with pytest.raises(ValidationError):
        d.pearson(np.ones(10), np.arange(10.0))


def test_select_features_planted_correlations():
    # channels built by noise mixing with planted correlations 0.9/0.7/0.5/0.3
    rng = np.random.default_rng(42)
    n = 4000
    z = rng.standard_normal(n)
    pv = z  # standardized target proxy
    channels = {}
    for name, rho in [("c9", 0.9), ("c7", 0.7), ("c5", 0.5), ("c3", 0.3)]:
        channels[name] = rho * z + math.sqrt(1 - rho * rho) * rng.standard_normal(n)
    for j in range(4):
        channels[f"noise{j}"] = rng.standard_normal(n)
    ds = d.AlignedDataset(_grid(n), pv, channels)
    assert d.select_features(ds, k=4) == ["c9", "c7", "c5", "c3"]


def test_select_features_skips_constant_channels():
    n = 100
    ds = d.AlignedDataset(
        _grid(n),
        np.arange(n, dtype=float),
        {"flat": np.ones(n), "good": np.arange(n, dtype=float)},
    )
    assert d.select_features(ds, k=2) == ["good"]


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------


def test_synth_deterministic_per_seed():
    cfg = d.SynthConfig(days=3)
    a = d.synth_dataset(cfg, seed=9)
    b = d.synth_dataset(cfg, seed=9)
    np.testing.assert_array_equal(a.pv, b.pv)
    for k in a.channels:
        np.testing.assert_array_equal(a.channels[k], b.channels[k])
    c = d.synth_dataset(cfg, seed=10)
    assert not np.array_equal(a.pv, c.pv)


def test_synth_night_is_zero_and_clear_sky_smooth():
    cfg = d.SynthConfig(days=2, cloud_amplitude=0.0)
    ds = d.synth_dataset(cfg, seed=1)
    n_day = 86400 // cfg.step_seconds
    frac = (np.arange(len(ds)) % n_day) / n_day
    night = (frac < 0.26) | (frac > 0.74)
    np.testing.assert_array_equal(ds.pv[night], 0.0)
    # clear sky: second differences of the daytime bell are small and smooth
    daylight = ds.pv[~night]
    assert np.all(daylight >= 0)
    assert np.max(np.abs(np.diff(daylight, 2))) < 0.02 * ds.pv.max()


def test_synth_strongest_channel_is_strongly_correlated():
    ds = d.synth_dataset(d.SynthConfig(days=30), seed=0)
    ranked = d.rank_features(ds)
    assert ranked[0][0] == "irradiance"
    assert abs(ranked[0][1]) > 0.8
    top4 = {name for name, _ in ranked[:4]}
    assert top4 == {"irradiance", "temperature", "humidity", "visibility"}


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------


def test_csv_round_trip_bitwise(tmp_path):
    ds = d.synth_dataset(d.SynthConfig(days=2), seed=5)
    ds.pv[7] = NA  # missing marker survives the trip
    path = tmp_path / "data.csv"
    d.write_csv(ds, str(path))
    back = d.read_csv(str(path))
    np.testing.assert_array_equal(back.timestamps, ds.timestamps)
    np.testing.assert_array_equal(back.pv, ds.pv)
    assert list(back.channels) == list(ds.channels)
    for k in ds.channels:
        np.testing.assert_array_equal(back.channels[k], ds.channels[k])


def test_csv_config_hash_comment_ignored_on_read(tmp_path):
    ds = d.synth_dataset(d.SynthConfig(days=1), seed=5)
    path = tmp_path / "data.csv"
    d.write_csv(ds, str(path), config_hash="abc123")
    first = path.read_text().splitlines()[0]
    assert first == "# config_hash=abc123"
    back = d.read_csv(str(path))
    assert len(back) == len(ds)


def test_csv_missing_pv_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("timestamp,power\n2024-06-01T00:00:00Z,1.0\n")
    with pytest.raises(ValidationError):
        d.read_csv(str(path))


def test_csv_ragged_row(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("timestamp,pv\n2024-06-01T00:00:00Z,1.0\n2024-06-01T00:05:00Z\n")
    with pytest.raises(ValidationError):
        d.read_csv(str(path))
