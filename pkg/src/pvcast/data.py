"""Time-series data handling for the forecasting pipeline.

Aligned PV + weather series on a constant sampling grid, missing-value repair
with per-day rules, z-score normalization, sliding-window construction,
chronological splitting, Pearson feature ranking, a synthetic data generator,
and CSV round-trip I/O.

Missing-value policy, applied per calendar day:

1. A gap touching the day boundary whose nearest known in-day neighbor is
   below ``day_peak_fraction`` of that day's absolute peak is zero-filled
   (night and dawn/dusk samples).
2. An interior gap of at most ``max_interp_gap`` samples with both in-day
   neighbors known is filled linearly: with ``n = gap + 1``, the i-th filled
   value is ``x1 + i * (x2 - x1) / n``.
3. Any other gap drops every day it intersects.  Dropped days keep their
   values untouched in the single-series repair; dataset-level repair excises
   their rows entirely.

All statistics in this module are population statistics (1/n denominators).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ValidationError

MISSING = float("nan")


def _as_seconds(timestamps: np.ndarray) -> np.ndarray:
    return np.asarray(timestamps, dtype="datetime64[s]")


def _check_grid(timestamps: np.ndarray) -> int:
    """Validate a strictly increasing constant-step grid, return the step.

    Gaps that are exact multiples of the base step are allowed: excising
    dropped days leaves seams on an otherwise constant grid.  Windowing
    treats any non-unit gap as a seam and never spans it.
    """
    if len(timestamps) < 2:
        raise ValidationError("time grid needs at least two samples")
    deltas = np.diff(timestamps).astype("timedelta64[s]").astype(np.int64)
    if np.any(deltas <= 0):
        raise ValidationError("timestamps must be strictly increasing")
    step = int(deltas.min())
    if np.any(deltas % step != 0):
        raise ValidationError("sampling step must be constant (seams may only skip whole steps)")
    return step


@dataclass
class TimeSeries:
    """A single named series on a constant-step time grid.

    NaN marks missing samples.  ``unit`` is a free-form annotation such as
    "kW" and is not interpreted anywhere.
    """

    timestamps: np.ndarray
    values: np.ndarray
    name: str = "series"
    unit: str = ""

    def __post_init__(self) -> None:
        self.timestamps = _as_seconds(self.timestamps)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or len(self.values) != len(self.timestamps):
            raise ValidationError("values must be 1-d and match the time grid")
        self.step_seconds = _check_grid(self.timestamps)

    def __len__(self) -> int:
        return len(self.values)


@dataclass
class AlignedDataset:
    """PV series plus weather channels sharing one time grid.

    ``channels`` preserves declaration order; that order breaks ties in
    feature ranking.
    """

    timestamps: np.ndarray
    pv: np.ndarray
    channels: dict[str, np.ndarray]
    units: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.timestamps = _as_seconds(self.timestamps)
        self.pv = np.asarray(self.pv, dtype=np.float64)
        self.step_seconds = _check_grid(self.timestamps)
        n = len(self.timestamps)
        if self.pv.shape != (n,):
            raise ValidationError("pv length must match the time grid")
        clean = {}
        for name, vals in self.channels.items():
            arr = np.asarray(vals, dtype=np.float64)
            if arr.shape != (n,):
                raise ValidationError(f"channel {name!r} length must match the time grid")
            clean[name] = arr
        self.channels = clean

    def __len__(self) -> int:
        return len(self.pv)

    def arrays(self) -> dict[str, np.ndarray]:
        """All series keyed by name, the pv target first."""
        return {"pv": self.pv, **self.channels}

    def take(self, mask: np.ndarray) -> "AlignedDataset":
        """Row subset by boolean mask; the result must still be a valid grid."""
        return AlignedDataset(
            self.timestamps[mask],
            self.pv[mask],
            {k: v[mask] for k, v in self.channels.items()},
            dict(self.units),
        )


# ---------------------------------------------------------------------------
# Missing-value repair
# ---------------------------------------------------------------------------


@dataclass
class RepairReport:
    """Counts per repair rule plus the dropped calendar days (ISO dates)."""

    zero_filled: int = 0
    interpolated: int = 0
    dropped_days: list[str] = field(default_factory=list)
    weather_filled: int = 0

    def to_dict(self) -> dict:
        return {
            "zero_filled": self.zero_filled,
            "interpolated": self.interpolated,
            "dropped_days": list(self.dropped_days),
            "weather_filled": self.weather_filled,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Half-open (start, stop) spans of consecutive True values."""
    edges = np.flatnonzero(np.diff(np.concatenate(([0], mask.astype(np.int8), [0]))))
    return list(zip(edges[0::2], edges[1::2]))


def repair_missing(
    series: TimeSeries,
    *,
    day_peak_fraction: float = 0.01,
    max_interp_gap: int = 2,
) -> tuple[TimeSeries, RepairReport]:
    """Apply the three per-day missing-value rules to one series.

    Rows of dropped days are left untouched (still NaN); callers excise them.
    The operation is idempotent: repairing an already repaired series changes
    nothing and reports the same dropped days.
    """
    values = series.values.copy()
    days = series.timestamps.astype("datetime64[D]")
    report = RepairReport()
    for day in np.unique(days):
        rows = np.flatnonzero(days == day)
        dv = values[rows]
        missing = np.isnan(dv)
        if not missing.any():
            continue
        if missing.all():
            report.dropped_days.append(str(day))
            continue
        threshold = day_peak_fraction * float(np.nanmax(np.abs(dv)))
        fills: list[tuple[str, int, int, np.ndarray | None]] = []
        drop = False
        for start, stop in _runs(missing):
            gap = stop - start
            if start == 0 or stop == len(dv):
                neighbor = dv[stop] if start == 0 else dv[start - 1]
                if abs(neighbor) < threshold:
                    fills.append(("zero", start, stop, None))
                else:
                    drop = True
                    break
            elif gap <= max_interp_gap:
                x1, x2 = dv[start - 1], dv[stop]
                n = gap + 1
                interp = x1 + np.arange(1, n) * (x2 - x1) / n
                fills.append(("interp", start, stop, interp))
            else:
                drop = True
                break
        if drop:
            report.dropped_days.append(str(day))
            continue
        for kind, start, stop, payload in fills:
            if kind == "zero":
                values[rows[start:stop]] = 0.0
                report.zero_filled += stop - start
            else:
                values[rows[start:stop]] = payload
                report.interpolated += stop - start
    repaired = TimeSeries(series.timestamps, values, series.name, series.unit)
    return repaired, report


def fill_gaps(values: np.ndarray) -> tuple[np.ndarray, int]:
    """Linear interpolation over NaN runs with edge hold; returns fill count.

    Used for weather channels, which do not follow the per-day PV rules.  An
    all-NaN channel becomes all zeros (and will be flagged constant later).
    """
    v = np.asarray(values, dtype=np.float64).copy()
    missing = np.isnan(v)
    n_fill = int(missing.sum())
    if n_fill == 0:
        return v, 0
    if missing.all():
        return np.zeros_like(v), n_fill
    idx = np.arange(len(v))
    v[missing] = np.interp(idx[missing], idx[~missing], v[~missing])
    return v, n_fill


def repair_dataset(
    ds: AlignedDataset,
    *,
    day_peak_fraction: float = 0.01,
    max_interp_gap: int = 2,
) -> tuple[AlignedDataset, RepairReport]:
    """Repair the pv series per the day rules, fill weather gaps linearly,
    then excise every dropped day's rows from the whole dataset."""
    pv_series = TimeSeries(ds.timestamps, ds.pv, name="pv", unit=ds.units.get("pv", ""))
    repaired, report = repair_missing(
        pv_series, day_peak_fraction=day_peak_fraction, max_interp_gap=max_interp_gap
    )
    channels = {}
    for name, vals in ds.channels.items():
        filled, n_fill = fill_gaps(vals)
        channels[name] = filled
        report.weather_filled += n_fill
    out = AlignedDataset(ds.timestamps, repaired.values, channels, dict(ds.units))
    if report.dropped_days:
        dropped = np.array(report.dropped_days, dtype="datetime64[D]")
        keep = ~np.isin(out.timestamps.astype("datetime64[D]"), dropped)
        if keep.sum() < 2:
            raise ValidationError("repair dropped almost every day; nothing left to model")
        out = out.take(keep)
    return out, report


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------


@dataclass
class NormStats:
    """Per-channel population mean/std fitted on the training span.

    Channels with zero variance are flagged in ``constant`` and are excluded
    from model inputs; their std is stored as 0 and treated as 1 on apply.
    """

    mean: dict[str, float]
    std: dict[str, float]
    constant: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "constant": list(self.constant)}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(dict(d["mean"]), dict(d["std"]), tuple(d["constant"]))


def zscore_fit(arrays: Mapping[str, np.ndarray]) -> NormStats:
    """Fit per-channel population moments."""
    mean: dict[str, float] = {}
    std: dict[str, float] = {}
    constant: list[str] = []
    for name, vals in arrays.items():
        v = np.asarray(vals, dtype=np.float64)
        if np.isnan(v).any():
            raise ValidationError(f"channel {name!r} still has missing values")
        if np.ptp(v) == 0.0:  # all samples identical; v.mean() may round off it
            mean[name] = float(v[0])
            std[name] = 0.0
            constant.append(name)
        else:
            mean[name] = float(v.mean())
            std[name] = float(v.std())
    return NormStats(mean, std, tuple(constant))


def zscore_apply(arrays: Mapping[str, np.ndarray], stats: NormStats) -> dict[str, np.ndarray]:
    out = {}
    for name, vals in arrays.items():
        sd = stats.std[name] or 1.0
        out[name] = (np.asarray(vals, dtype=np.float64) - stats.mean[name]) / sd
    return out


def zscore_invert(arrays: Mapping[str, np.ndarray], stats: NormStats) -> dict[str, np.ndarray]:
    out = {}
    for name, vals in arrays.items():
        sd = stats.std[name] or 1.0
        out[name] = np.asarray(vals, dtype=np.float64) * sd + stats.mean[name]
    return out


# ---------------------------------------------------------------------------
# Windows and splits
# ---------------------------------------------------------------------------


@dataclass
class SampleWindow:
    """One training sample: lookback blocks for each input group plus the
    scalar target at ``target_time``."""

    inputs_high: np.ndarray
    inputs_low: np.ndarray
    inputs_weather: np.ndarray
    target: float
    target_time: np.datetime64


class WindowSet:
    """Dense array view over sliding windows.

    Shapes: x_high and x_low are (n, lookback, 1), x_weather is
    (n, lookback, n_features), y and times are (n,).
    """

    def __init__(
        self,
        x_high: np.ndarray,
        x_low: np.ndarray,
        x_weather: np.ndarray,
        y: np.ndarray,
        times: np.ndarray,
        feature_names: tuple[str, ...],
    ) -> None:
        self.x_high = x_high
        self.x_low = x_low
        self.x_weather = x_weather
        self.y = y
        self.times = times
        self.feature_names = feature_names

    def __len__(self) -> int:
        return len(self.y)

    def __getitem__(self, i: int) -> SampleWindow:
        return SampleWindow(
            self.x_high[i], self.x_low[i], self.x_weather[i], float(self.y[i]), self.times[i]
        )

    def slice_range(self, start: int, stop: int) -> "WindowSet":
        return WindowSet(
            self.x_high[start:stop],
            self.x_low[start:stop],
            self.x_weather[start:stop],
            self.y[start:stop],
            self.times[start:stop],
            self.feature_names,
        )


def make_windows(
    ds: AlignedDataset,
    high: np.ndarray,
    low: np.ndarray,
    lookback: int = 12,
    horizon: int = 1,
    channels: Sequence[str] | None = None,
) -> WindowSet:
    """Build sliding windows over the dataset grid.

    Targets come from ``ds.pv`` in physical units; ``high``/``low`` are the
    (typically normalized) frequency components aligned to the same grid.
    Windows whose span crosses a timestamp seam (excised day) are excluded.
    """
    n = len(ds)
    if lookback < 1 or horizon < 1:
        raise ValidationError("lookback and horizon must be positive")
    span = lookback + horizon
    if n < span:
        raise ValidationError(f"need at least {span} rows for lookback {lookback}, horizon {horizon}")
    high = np.asarray(high, dtype=np.float64)
    low = np.asarray(low, dtype=np.float64)
    if high.shape != (n,) or low.shape != (n,):
        raise ValidationError("high/low components must match the dataset grid")
    names = tuple(channels if channels is not None else ds.channels)
    for name in names:
        if name not in ds.channels:
            raise ValidationError(f"unknown channel {name!r}")
    weather = np.stack([ds.channels[name] for name in names], axis=1) if names else np.zeros((n, 0))

    step = np.timedelta64(ds.step_seconds, "s")
    good = (np.diff(ds.timestamps) == step).astype(np.int64)
    run = np.concatenate(([0], np.cumsum(good)))
    # Window with inputs at rows [j, j+lookback) and target at j+span-1 needs
    # span-1 consecutive unit steps starting at j.
    starts = np.arange(n - span + 1)
    valid = (run[starts + span - 1] - run[starts]) == span - 1

    win_high = np.lib.stride_tricks.sliding_window_view(high, lookback)[starts][valid]
    win_low = np.lib.stride_tricks.sliding_window_view(low, lookback)[starts][valid]
    if names:
        win_w = np.lib.stride_tricks.sliding_window_view(weather, (lookback, len(names)))
        win_w = win_w[:, 0][starts][valid].reshape(-1, lookback, len(names))
    else:
        win_w = np.zeros((int(valid.sum()), lookback, 0))
    target_rows = starts[valid] + span - 1
    return WindowSet(
        win_high[..., None].copy(),
        win_low[..., None].copy(),
        np.ascontiguousarray(win_w),
        ds.pv[target_rows].copy(),
        ds.timestamps[target_rows].copy(),
        names,
    )


def split_windows(
    windows: WindowSet, ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
) -> tuple[WindowSet, WindowSet, WindowSet]:
    """Chronological train/val/test split.

    Val and test sizes are floor-rounded; the remainder goes to train, so
    100 windows at (0.8, 0.1, 0.1) split 80/10/10 and 12 split 10/1/1.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ValidationError("ratios must be three non-negative numbers")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValidationError("ratios must sum to 1")
    n = len(windows)
    if n < 3:
        raise ValidationError("need at least three windows to split")
    n_val = math.floor(n * ratios[1])
    n_test = math.floor(n * ratios[2])
    n_train = n - n_val - n_test
    return (
        windows.slice_range(0, n_train),
        windows.slice_range(n_train, n_train + n_val),
        windows.slice_range(n_train + n_val, n),
    )


# ---------------------------------------------------------------------------
# Feature ranking
# ---------------------------------------------------------------------------


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Population Pearson correlation coefficient.

    Raises ValidationError on constant input rather than returning 0; a
    constant channel has no defined correlation.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValidationError("pearson needs two equal-length 1-d arrays (n >= 2)")
    dx = x - x.mean()
    dy = y - y.mean()
    vx = float(np.mean(dx * dx))
    vy = float(np.mean(dy * dy))
    if vx == 0.0 or vy == 0.0:
        raise ValidationError("pearson is undefined for constant input")
    r = float(np.mean(dx * dy) / math.sqrt(vx * vy))
    return min(1.0, max(-1.0, r))


def rank_features(ds: AlignedDataset) -> list[tuple[str, float]]:
    """Channels ranked by |pearson(channel, pv)| descending.

    Constant channels are skipped; ties keep declaration order.
    """
    ranked = []
    for order, (name, vals) in enumerate(ds.channels.items()):
        if np.ptp(vals) == 0.0:
            continue
        ranked.append((name, pearson(vals, ds.pv), order))
    ranked.sort(key=lambda item: (-abs(item[1]), item[2]))
    return [(name, rho) for name, rho, _ in ranked]


def select_features(ds: AlignedDataset, k: int = 4) -> list[str]:
    """Top-k channel names by absolute Pearson correlation with pv."""
    if k < 1:
        raise ValidationError("k must be positive")
    return [name for name, _ in rank_features(ds)[:k]]


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


@dataclass
class SynthConfig:
    """Synthetic plant: clear-sky diurnal bell, seasonal drift, a smooth cloud
    process, and gated measurement noise.  ``cloud_amplitude`` 0 gives an
    exactly smooth clear-sky series with zero nighttime output."""

    days: int = 30
    step_seconds: int = 300
    peak_power: float = 100.0
    cloud_amplitude: float = 0.3
    start: str = "2024-06-01T00:00:00"

    def to_dict(self) -> dict:
        return {
            "days": self.days,
            "step_seconds": self.step_seconds,
            "peak_power": self.peak_power,
            "cloud_amplitude": self.cloud_amplitude,
            "start": self.start,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        return cls(**d)


def _smooth(values: np.ndarray, width: int) -> np.ndarray:
    width = max(1, min(width, len(values)))
    kernel = np.ones(width) / width
    return np.convolve(values, kernel, mode="same")


def synth_dataset(config: SynthConfig, seed: int = 0) -> AlignedDataset:
    """Generate a deterministic PV + weather dataset.

    Channels (strongest expected |correlation| with pv first): irradiance,
    temperature, humidity, visibility, then four weak distractors
    (wind_speed, wind_direction, pressure, rainfall).  Nighttime pv is
    exactly zero.
    """
    if config.days < 1:
        raise ValidationError("days must be positive")
    if 86400 % config.step_seconds != 0:
        raise ValidationError("step must divide a day")
    rng = np.random.default_rng(seed)
    n_day = 86400 // config.step_seconds
    n = config.days * n_day
    start = np.datetime64(config.start, "s")
    timestamps = start + np.arange(n) * np.timedelta64(config.step_seconds, "s")

    frac = (np.arange(n) % n_day) / n_day
    day = np.arange(n) // n_day
    sunrise, sunset = 0.26, 0.74
    u = (frac - sunrise) / (sunset - sunrise)
    bell = np.where((u > 0) & (u < 1), np.sin(np.pi * np.clip(u, 0, 1)) ** 1.5, 0.0)
    season = 1.0 + 0.15 * np.sin(2 * np.pi * day / 365.0 + 0.7)

    amp = config.cloud_amplitude
    raw = _smooth(rng.standard_normal(n), max(3, (3 * 3600) // config.step_seconds))
    lo, hi = raw.min(), raw.max()
    cloud01 = (raw - lo) / (hi - lo) if hi > lo else np.zeros(n)
    cloud = amp * cloud01

    clear = config.peak_power * bell * season
    pv = clear * (1.0 - 0.85 * cloud)
    pv = pv + (bell > 0) * rng.normal(0.0, 0.008 * config.peak_power * amp if amp > 0 else 0.0, n)
    pv = np.clip(pv, 0.0, None)
    pv[bell == 0.0] = 0.0

    lag = max(1, (2 * 3600) // config.step_seconds)
    bell_lag = np.roll(bell, lag)
    irradiance = 1000.0 * bell * season * (1.0 - 0.9 * cloud) + rng.normal(0, 4.0, n)
    temperature = (
        18.0
        + 9.0 * bell_lag * season
        + 3.0 * np.sin(2 * np.pi * day / 365.0)
        + _smooth(rng.normal(0, 1.2, n), 24)
    )
    humidity = 72.0 - 24.0 * bell + 14.0 * cloud01 * amp + rng.normal(0, 4.5, n)
    visibility = 17.0 + 3.0 * bell - 9.0 * cloud + rng.normal(0, 2.8, n)

    wind = np.abs(_smooth(rng.standard_normal(n), 48)) * 12.0 + rng.normal(0, 0.8, n) + 3.0
    wind_dir = np.mod(np.cumsum(rng.normal(0, 4.0, n)), 360.0)
    pressure = 1013.0 + _smooth(rng.standard_normal(n), 600) * 40.0 + rng.normal(0, 0.5, n)
    bursts = (rng.random(n) < 0.01).astype(float) * rng.exponential(1.5, n)
    rainfall = np.clip(_smooth(bursts, 6), 0.0, None)

    channels = {
        "irradiance": irradiance,
        "temperature": temperature,
        "humidity": humidity,
        "visibility": visibility,
        "wind_speed": wind,
        "wind_direction": wind_dir,
        "pressure": pressure,
        "rainfall": rainfall,
    }
    units = {
        "pv": "kW",
        "irradiance": "W/m2",
        "temperature": "degC",
        "humidity": "%",
        "visibility": "km",
        "wind_speed": "m/s",
        "wind_direction": "deg",
        "pressure": "hPa",
        "rainfall": "mm",
    }
    return AlignedDataset(timestamps, pv, channels, units)


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------


def _format_value(v: float) -> str:
    if math.isnan(v):
        return "NA"
    return repr(float(v))


def _parse_value(s: str) -> float:
    s = s.strip()
    if s == "" or s.upper() in ("NA", "N/A", "NAN"):
        return MISSING
    return float(s)


def _parse_timestamp(s: str) -> np.datetime64:
    s = s.strip().replace("Z", "").replace("+00:00", "")
    try:
        return np.datetime64(s, "s")
    except ValueError as exc:
        raise ValidationError(f"bad timestamp {s!r}") from exc


def write_csv(ds: AlignedDataset, path: str, config_hash: str | None = None) -> None:
    """Write the dataset as RFC 3339 timestamps plus one column per series.

    Floats use Python repr (shortest round-trip form); NaN becomes "NA".  An
    optional leading comment line carries the config hash for provenance.
    """
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "pv", *ds.channels])
        channel_cols = list(ds.channels.values())
        for i in range(len(ds)):
            stamp = np.datetime_as_string(ds.timestamps[i], unit="s") + "Z"
            row = [stamp, _format_value(ds.pv[i])]
            row.extend(_format_value(col[i]) for col in channel_cols)
            writer.writerow(row)


def read_csv(path: str) -> AlignedDataset:
    """Read a dataset written by :func:`write_csv` (or hand-made in the same
    shape).  Requires a ``timestamp`` column and a ``pv`` column; every other
    column becomes a weather channel in file order."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#")) if r]
    if not rows:
        raise ValidationError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if "timestamp" not in header or "pv" not in header:
        raise ValidationError(f"{path}: header must contain 'timestamp' and 'pv'")
    t_col = header.index("timestamp")
    pv_col = header.index("pv")
    names = [h for i, h in enumerate(header) if i not in (t_col, pv_col)]
    cols = [i for i in range(len(header)) if i not in (t_col, pv_col)]
    stamps, pv, channel_rows = [], [], []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ValidationError(f"{path}:{r}: expected {len(header)} fields, got {len(row)}")
        stamps.append(_parse_timestamp(row[t_col]))
        pv.append(_parse_value(row[pv_col]))
        channel_rows.append([_parse_value(row[i]) for i in cols])
    channel_data = np.array(channel_rows, dtype=np.float64).reshape(len(stamps), len(names))
    channels = {name: channel_data[:, j] for j, name in enumerate(names)}
    return AlignedDataset(np.array(stamps, dtype="datetime64[s]"), np.array(pv), channels)
