"""Power series ingestion, normalization, windowing and day-wise splitting.

Also houses the synthetic AR(1) + diurnal generator used for desk-scale
experiments and the persistence point forecast.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

TIME_UNIT = "s"


@dataclass
class PowerSeries:
    timestamps: np.ndarray  # datetime64[s], uniformly spaced
    power: np.ndarray
    forecast: np.ndarray | None = None
    capacity: float = 1.0

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=f"datetime64[{TIME_UNIT}]")
        self.power = np.asarray(self.power, dtype=np.float64)
        if self.forecast is not None:
            self.forecast = np.asarray(self.forecast, dtype=np.float64)
        self.validate()

    def __len__(self):
        return len(self.power)

    @property
    def step(self) -> np.timedelta64:
        if len(self) < 2:
            return np.timedelta64(0, TIME_UNIT)
        return self.timestamps[1] - self.timestamps[0]

    def validate(self) -> None:
        n = len(self.power)
        if n < 1:
            raise DataError("series must contain at least one value")
        if self.timestamps.shape != (n,):
            raise DataError("timestamps and power differ in length")
        if self.forecast is not None and self.forecast.shape != (n,):
            raise DataError("forecast and power differ in length")
        if not np.all(np.isfinite(self.power)):
            row = int(np.flatnonzero(~np.isfinite(self.power))[0])
            raise DataError(f"non-finite power at row {row}")
        if np.any(self.power < 0):
            row = int(np.flatnonzero(self.power < 0)[0])
            raise DataError(f"negative power at row {row}")
        if self.forecast is not None and not np.all(np.isfinite(self.forecast)):
            raise DataError("non-finite forecast value")
        if not self.capacity > 0:
            raise DataError("capacity must be positive")
        if n >= 2:
            diffs = np.diff(self.timestamps)
            if diffs[0] <= np.timedelta64(0, TIME_UNIT):
                raise DataError("timestamps must be strictly increasing")
            bad = np.flatnonzero(diffs != diffs[0])
            if bad.size:
                row = int(bad[0]) + 1
                raise DataError(
                    f"non-uniform spacing at row {row}: expected {diffs[0]}, got {diffs[bad[0]]}"
                )


def _parse_float(text: str, row: int, column: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise DataError(f"row {row}: cannot parse {column}={text!r}") from None


def load_csv(path, capacity: float = 1.0) -> PowerSeries:
    """Read ``timestamp,power[,forecast]`` with ISO-8601 timestamps."""
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        fields = reader.fieldnames or []
        missing = {"timestamp", "power"} - set(fields)
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        has_forecast = "forecast" in fields
        stamps, power, forecast = [], [], []
        for row, rec in enumerate(reader):
            try:
                stamps.append(np.datetime64(rec["timestamp"], TIME_UNIT))
            except ValueError:
                raise DataError(f"row {row}: bad timestamp {rec['timestamp']!r}") from None
            power.append(_parse_float(rec["power"], row, "power"))
            if has_forecast:
                forecast.append(_parse_float(rec["forecast"], row, "forecast"))
    if not power:
        raise DataError(f"{path}: no data rows")
    return PowerSeries(np.array(stamps), np.array(power),
                       np.array(forecast) if has_forecast else None, capacity)


def save_csv(series: PowerSeries, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        header = ["timestamp", "power"] + (["forecast"] if series.forecast is not None else [])
        w.writerow(header)
        for i in range(len(series)):
            row = [str(series.timestamps[i]), repr(float(series.power[i]))]
            if series.forecast is not None:
                row.append(repr(float(series.forecast[i])))
            w.writerow(row)


def normalize(series: PowerSeries) -> PowerSeries:
    """Divide power (and forecast) by nominal capacity; result has capacity 1."""
    cap = series.capacity
    if np.any(series.power > cap):
        row = int(np.flatnonzero(series.power > cap)[0])
        raise DataError(f"power {series.power[row]} at row {row} exceeds capacity {cap}")
    forecast = None
    if series.forecast is not None:
        bad = np.flatnonzero((series.forecast < 0) | (series.forecast > cap))
        if bad.size:
            row = int(bad[0])
            raise DataError(f"forecast {series.forecast[row]} at row {row} outside [0, {cap}]")
        forecast = series.forecast / cap
    return PowerSeries(series.timestamps.copy(), series.power / cap, forecast, 1.0)


# -- windows --------------------------------------------------------------------

@dataclass
class Window:
    """Contiguous slice ``values = [history (h+1) | horizon (k)]`` of a series."""

    values: np.ndarray
    h: int
    k: int
    start: int
    timestamps: np.ndarray
    forecast: np.ndarray | None = None

    @property
    def history(self) -> np.ndarray:
        return self.values[: self.h + 1]

    @property
    def horizon(self) -> np.ndarray:
        return self.values[self.h + 1:]

    @property
    def origin(self) -> np.datetime64:
        """Timestamp of the last observed value p_t."""
        return self.timestamps[self.h]

    @property
    def origin_index(self) -> int:
        return self.start + self.h

    def days(self) -> np.ndarray:
        return np.unique(self.timestamps.astype("datetime64[D]"))


def window(series: PowerSeries, h: int, k: int, stride: int = 1, offset: int = 0) -> list:
    """Sliding windows of length h+k+1 every ``stride`` steps from ``offset``."""
    if h < 0 or k < 1 or stride < 1 or offset < 0:
        raise ConfigError("need h >= 0, k >= 1, stride >= 1, offset >= 0")
    length = h + k + 1
    n = len(series) - offset
    if n < length:
        raise DataError(f"series of length {len(series)} too short for windows of length {length}")
    count = (n - length) // stride + 1
    out = []
    for j in range(count):
        s = offset + j * stride
        fc = None
        if series.forecast is not None:
            fc = series.forecast[s + h + 1: s + length].copy()
        out.append(Window(series.power[s: s + length].copy(), h, k, s,
                          series.timestamps[s: s + length].copy(), fc))
    return out


def day_windows(series: PowerSeries, h: int, k: int) -> list:
    """Day-aligned windows: one per calendar day, starting at midnight."""
    step = series.step
    if step <= np.timedelta64(0, TIME_UNIT):
        raise DataError("day-aligned windows need at least two timestamps")
    per_day = np.timedelta64(1, "D") // step
    if per_day < 1 or np.timedelta64(1, "D") % step:
        raise DataError(f"step {step} does not divide a day")
    ts = series.timestamps
    midnight = np.flatnonzero(ts == ts.astype("datetime64[D]").astype(ts.dtype))
    if midnight.size == 0:
        raise DataError("series contains no midnight timestamp")
    return window(series, h, k, stride=int(per_day), offset=int(midnight[0]))


def split_by_day(windows: list, ratio: float = 0.9, seed=0, drop_crossing: bool = True):
    """Assign whole calendar days (by window origin) to train/test by seeded shuffle.

    With ``drop_crossing`` a window whose span touches a day of the other
    partition is discarded, so no window straddles the split.
    """
    if not 0.0 < ratio < 1.0:
        raise ConfigError("ratio must lie strictly between 0 and 1")
    origin_days = np.array([w.origin.astype("datetime64[D]") for w in windows])
    days = np.unique(origin_days)
    if len(days) < 2:
        raise DataError(f"need at least 2 distinct days to split, got {len(days)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(days))
    n_train = min(max(int(round(ratio * len(days))), 1), len(days) - 1)
    train_days = set(days[order[:n_train]].tolist())
    train, test = [], []
    for w, day in zip(windows, origin_days):
        in_train = day.tolist() in train_days
        if drop_crossing:
            span = {d.tolist() for d in w.days()}
            if in_train and not span <= train_days:
                continue
            if not in_train and span & train_days:
                continue
        (train if in_train else test).append(w)
    return train, test


# -- synthetic data -------------------------------------------------------------

@dataclass
class SyntheticConfig:
    rho: float = 0.8
    base: float = 0.5
    amplitude: float = 0.2
    noise_std: float = 0.06
    length: int = 10_000
    seed: int = 0
    clip: bool = True
    step_minutes: int = 5
    start: str = "2007-01-01T00:00:00"

    def validate(self) -> None:
        if not -1.0 < self.rho < 1.0:
            raise ConfigError("rho must lie in (-1, 1)")
        if self.length < 1 or self.step_minutes < 1:
            raise ConfigError("length and step_minutes must be positive")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be non-negative")

    @property
    def steps_per_day(self) -> float:
        return 24 * 60 / self.step_minutes

    @classmethod
    def from_json(cls, path) -> "SyntheticConfig":
        d = json.loads(Path(path).read_text())
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown synthetic config keys {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> dict:
        return asdict(self)


def synth_generate(config: SyntheticConfig) -> PowerSeries:
    """x_t = clip(base + amplitude*sin(2 pi t / day) + e_t), e_t = rho*e_{t-1} + noise.

    e_0 is drawn from the stationary law so the AR component has lag-k
    autocorrelation rho**k from the first sample on.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    n = config.length
    shocks = rng.standard_normal(n) * config.noise_std
    e = np.empty(n)
    e[0] = shocks[0] / math.sqrt(1.0 - config.rho ** 2)
    for t in range(1, n):
        e[t] = config.rho * e[t - 1] + shocks[t]
    t = np.arange(n)
    x = config.base + config.amplitude * np.sin(2.0 * np.pi * t / config.steps_per_day) + e
    if config.clip:
        x = np.clip(x, 0.0, 1.0)
    start = np.datetime64(config.start, TIME_UNIT)
    stamps = start + t * np.timedelta64(config.step_minutes * 60, TIME_UNIT)
    return PowerSeries(stamps, x, None, 1.0)


def persistence_forecast(values, origin: int, k: int) -> np.ndarray:
    """Repeat the value observed at ``origin`` over the next ``k`` steps."""
    values = np.asarray(values, dtype=np.float64)
    if not 0 <= origin < len(values):
        raise DataError(f"origin {origin} outside series of length {len(values)}")
    if k < 1:
        raise ConfigError("k must be at least 1")
    return np.full(k, values[origin])
