"""Synthetic series: seasonal generator, random walks, the (w/o RW) / (+RW) pair and a trend-shift set."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .series import SplitSpec, TimeSeries

PERIOD_LABELS = {24: "hourly", 96: "15min", 144: "10 minutes", 7: "daily", 52: "weekly"}


@dataclass(frozen=True)
class SynthSpec:
    length: int = 3000
    period: int = 24
    trend_slope: float = 0.0
    noise_sigma: float = 0.05
    rw_sigma: float = 0.05
    amplitude: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.period < 2 or self.length < 4 * self.period:
            raise ValueError(f"need period >= 2 and length >= 4*period, got {self.length}, {self.period}")
        if self.noise_sigma < 0 or self.rw_sigma < 0:
            raise ValueError("sigmas must be non-negative")

    @property
    def frequency(self) -> str:
        return PERIOD_LABELS.get(self.period, str(self.period))

    def seeds(self) -> list[np.random.SeedSequence]:
        """Independent streams: [seasonal noise, x_rw, x_rw_hat, spare]."""
        return np.random.SeedSequence(self.seed).spawn(4)


def seasonal_values(spec: SynthSpec) -> np.ndarray:
    t = np.arange(spec.length, dtype=float)
    base = spec.amplitude * np.sin(2.0 * np.pi * t / spec.period) + spec.trend_slope * t
    if spec.noise_sigma > 0:
        base = base + np.random.default_rng(spec.seeds()[0]).normal(0.0, spec.noise_sigma, spec.length)
    return base


def gen_seasonal(spec: SynthSpec) -> TimeSeries:
    return TimeSeries(seasonal_values(spec), spec.frequency, ("value",))


def gen_random_walk(length: int, rw_sigma: float, seed) -> np.ndarray:
    """Walk starting at 1 with N(0, rw_sigma^2) steps, lifted so that its minimum is >= 0.5."""
    if length < 1:
        raise ValueError("length must be >= 1")
    steps = np.random.default_rng(seed).normal(0.0, rw_sigma, length - 1) if rw_sigma > 0 else np.zeros(length - 1)
    walk = 1.0 + np.concatenate([[0.0], np.cumsum(steps)])
    low = walk.min()
    if low < 0.5:
        walk = walk + (0.5 - low)
    return walk


@dataclass(frozen=True)
class RWComponents:
    x_s: np.ndarray
    x_rw: np.ndarray
    x_rw_hat: np.ndarray

    @property
    def wo_rw(self) -> np.ndarray:
        return self.x_s * self.x_rw

    @property
    def with_rw(self) -> np.ndarray:
        return (self.x_s + self.x_rw) * self.x_rw_hat


def rw_components(spec: SynthSpec) -> RWComponents:
    _, s_rw, s_hat, _ = spec.seeds()
    return RWComponents(
        seasonal_values(spec),
        gen_random_walk(spec.length, spec.rw_sigma, s_rw),
        gen_random_walk(spec.length, spec.rw_sigma, s_hat),
    )


def compose_wo_rw(spec: SynthSpec) -> TimeSeries:
    return TimeSeries(rw_components(spec).wo_rw, spec.frequency, ("value",))


def compose_with_rw(spec: SynthSpec) -> TimeSeries:
    return TimeSeries(rw_components(spec).with_rw, spec.frequency, ("value",))


def gen_trend_shift(spec: SynthSpec, split: SplitSpec | None = None, ratio: float = 1.5) -> TimeSeries:
    """Seasonal series whose trend is ``ratio`` times steeper over the train split than afterwards.

    The trend is continuous at the train/validation boundary; validation and
    test share the gentler slope.
    """
    split = split or SplitSpec()
    train_end, _ = split.boundaries(spec.length)
    t = np.arange(spec.length, dtype=float)
    slope = spec.trend_slope
    trend = np.where(t < train_end, ratio * slope * t, ratio * slope * train_end + slope * (t - train_end))
    flat = SynthSpec(spec.length, spec.period, 0.0, spec.noise_sigma, spec.rw_sigma, spec.amplitude, spec.seed)
    return TimeSeries(seasonal_values(flat) + trend, spec.frequency, ("value",))
