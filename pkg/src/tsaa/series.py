"""Time-series containers, chronological splits, windowing, scaling and error metrics."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)


class SeriesError(ValueError):
    """Raised for malformed series, impossible windowing or bad split requests."""


@dataclass(frozen=True)
class TimeSeries:
    values: np.ndarray
    frequency: str = ""
    channel_names: tuple[str, ...] = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise SeriesError(f"expected a non-empty [timesteps x channels] matrix, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise SeriesError("series contains NaN or Inf values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        names = tuple(self.channel_names) or tuple(f"c{i}" for i in range(values.shape[1]))
        if len(names) != values.shape[1]:
            raise SeriesError(f"{len(names)} channel names for {values.shape[1]} channels")
        object.__setattr__(self, "channel_names", names)

    @property
    def timesteps(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def slice(self, start: int, stop: int) -> "TimeSeries":
        return TimeSeries(self.values[start:stop], self.frequency, self.channel_names)

    def with_values(self, values: np.ndarray) -> "TimeSeries":
        return TimeSeries(values, self.frequency, self.channel_names)


@dataclass(frozen=True)
class WindowPair:
    """A (lookback, horizon) example cut from a parent series at ``origin_index``."""

    x: np.ndarray
    y: np.ndarray
    origin_index: int = 0

    @property
    def lookback(self) -> int:
        return self.x.shape[0]

    @property
    def horizon(self) -> int:
        return self.y.shape[0]

    def joined(self) -> np.ndarray:
        return np.concatenate([self.x, self.y], axis=0)


@dataclass
class WindowSet:
    """Stacked windows: ``x`` is (n, L, C), ``y`` is (n, H, C)."""

    x: np.ndarray
    y: np.ndarray
    origins: np.ndarray

    def __len__(self) -> int:
        return self.x.shape[0]

    @classmethod
    def from_pairs(cls, pairs: Sequence[WindowPair]) -> "WindowSet":
        if not pairs:
            raise SeriesError("no windows to stack")
        return cls(
            np.stack([p.x for p in pairs]),
            np.stack([p.y for p in pairs]),
            np.array([p.origin_index for p in pairs], dtype=int),
        )

    def pairs(self) -> list[WindowPair]:
        return [WindowPair(self.x[i], self.y[i], int(self.origins[i])) for i in range(len(self))]

    def subset(self, idx) -> "WindowSet":
        return WindowSet(self.x[idx], self.y[idx], self.origins[idx])


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    val_fraction: float = 0.1
    test_fraction: float = 0.2

    def __post_init__(self):
        fr = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(not 0.0 < f < 1.0 for f in fr):
            raise SeriesError(f"split fractions must lie in (0, 1), got {fr}")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise SeriesError(f"split fractions must sum to 1, got {sum(fr)}")

    def boundaries(self, timesteps: int) -> tuple[int, int]:
        """Return (train_end, val_end) indices."""
        train_end = int(round(timesteps * self.train_fraction))
        val_end = int(round(timesteps * (self.train_fraction + self.val_fraction)))
        if not 0 < train_end < val_end < timesteps:
            raise SeriesError(f"series of {timesteps} steps is too short for split {self}")
        return train_end, val_end


def chronological_split(series: TimeSeries, split: SplitSpec) -> tuple[TimeSeries, TimeSeries, TimeSeries]:
    train_end, val_end = split.boundaries(series.timesteps)
    return series.slice(0, train_end), series.slice(train_end, val_end), series.slice(val_end, series.timesteps)


def make_windows(series: TimeSeries, lookback: int, horizon: int, stride: int = 1) -> list[WindowPair]:
    """Cut contiguous (x, y) pairs; y starts right where x ends."""
    if lookback <= 0 or horizon <= 0:
        raise SeriesError("lookback and horizon must be positive")
    if stride < 1:
        raise SeriesError("stride must be >= 1")
    span = lookback + horizon
    if series.timesteps < span:
        raise SeriesError(
            f"series has {series.timesteps} steps but lookback+horizon = {lookback}+{horizon} = {span}"
        )
    v = series.values
    return [
        WindowPair(v[o : o + lookback], v[o + lookback : o + span], o)
        for o in range(0, series.timesteps - span + 1, stride)
    ]


def make_window_set(series: TimeSeries, lookback: int, horizon: int, stride: int = 1) -> WindowSet:
    return WindowSet.from_pairs(make_windows(series, lookback, horizon, stride))


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=float) - self.mean) / self.std

    def invert(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=float) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}


def fit_standardizer(train: TimeSeries) -> Standardizer:
    """Per-channel z-score statistics (population std) from the training slice."""
    v = train.values
    mean = v.mean(axis=0)
    std = v.std(axis=0)
    degenerate = ~(std > 0)
    if degenerate.any():
        names = [train.channel_names[i] for i in np.flatnonzero(degenerate)]
        logger.warning("constant channel(s) %s: std forced to 1", names)
        std = np.where(degenerate, 1.0, std)
    return Standardizer(mean, std)


def _check_shapes(pred, truth):
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise SeriesError(f"shape mismatch: prediction {pred.shape} vs truth {truth.shape}")
    return pred, truth


def mse(pred, truth) -> float:
    pred, truth = _check_shapes(pred, truth)
    return float(np.mean((pred - truth) ** 2))


def mae(pred, truth) -> float:
    pred, truth = _check_shapes(pred, truth)
    return float(np.mean(np.abs(pred - truth)))


def relative_improvement(e_b: float, e_n: float) -> float:
    """Percent error reduction of ``e_n`` over the baseline error ``e_b``."""
    if not e_b > 0:
        raise SeriesError(f"baseline error must be positive, got {e_b}")
    return 100.0 * (e_b - e_n) / e_b


def read_csv(path, frequency: str = "") -> TimeSeries:
    """Load a header-ful CSV; a non-numeric first column is treated as a timestamp and dropped."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise SeriesError(f"{path}: need a header row and at least one data row")
    header, body = rows[0], [r for r in rows[1:] if r]
    first_col_numeric = True
    try:
        float(body[0][0])
    except (ValueError, IndexError):
        first_col_numeric = False
    start = 0 if first_col_numeric else 1
    names = header[start:]
    if not names:
        raise SeriesError(f"{path}: no numeric channels")
    try:
        values = np.array([[float(c) for c in r[start:]] for r in body], dtype=float)
    except ValueError as exc:
        raise SeriesError(f"{path}: non-numeric value ({exc})") from None
    if values.ndim != 2 or values.shape[1] != len(names):
        raise SeriesError(f"{path}: ragged rows")
    return TimeSeries(values, frequency, tuple(names))


def write_csv(path, series: TimeSeries, timestamps: Sequence | None = None) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if timestamps is None:
            w.writerow(series.channel_names)
            for row in series.values:
                w.writerow([repr(float(v)) for v in row])
        else:
            w.writerow(["date", *series.channel_names])
            for ts, row in zip(timestamps, series.values):
                w.writerow([ts, *(repr(float(v)) for v in row)])


@dataclass
class Dataset:
    """Standardized train/val/test windows plus what augmentation needs from the train split."""

    train: WindowSet
    val: WindowSet
    test: WindowSet
    train_series: TimeSeries
    standardizer: Standardizer
    lookback: int
    horizon: int
    decomposition: object = None
    meta: dict = field(default_factory=dict)

    @property
    def channels(self) -> int:
        return self.train.x.shape[2]


def prepare_dataset(
    series: TimeSeries,
    lookback: int,
    horizon: int,
    split: SplitSpec | None = None,
    stride: int = 1,
    standardize: bool = True,
) -> Dataset:
    """Split chronologically, standardize with train statistics and window each split.

    Windows are cut inside each split, so no horizon crosses a split boundary.
    """
    split = split or SplitSpec()
    train, val, test = chronological_split(series, split)
    if standardize:
        scaler = fit_standardizer(train)
    else:
        scaler = Standardizer(np.zeros(series.channels), np.ones(series.channels))
    train, val, test = (s.with_values(scaler.apply(s.values)) for s in (train, val, test))
    return Dataset(
        train=make_window_set(train, lookback, horizon, stride),
        val=make_window_set(val, lookback, horizon, stride),
        test=make_window_set(test, lookback, horizon, stride),
        train_series=train,
        standardizer=scaler,
        lookback=lookback,
        horizon=horizon,
    )
