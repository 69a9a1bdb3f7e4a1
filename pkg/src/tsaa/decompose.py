"""Additive seasonal-trend decomposition with loess (classical STL, Cleveland et al. 1990)."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .series import TimeSeries

PERIODS = {
    "hourly": 24,
    "15min": 96,
    "10 minutes": 144,
    "daily": 7,
    "weekly": 52,
}

_ALIASES = {
    "h": "hourly",
    "1h": "hourly",
    "hour": "hourly",
    "15t": "15min",
    "15 minutes": "15min",
    "10min": "10 minutes",
    "10t": "10 minutes",
    "d": "daily",
    "1d": "daily",
    "day": "daily",
    "w": "weekly",
    "1w": "weekly",
    "week": "weekly",
}

# loess chunking: bound the (eval points x span) work matrices
_CHUNK = 1 << 20


class DecompositionError(ValueError):
    pass


def infer_period(frequency_label: str, override: int | None = None) -> int:
    """Samples per dominant seasonal cycle for a frequency label."""
    if override is not None:
        if override < 2:
            raise DecompositionError(f"period override must be >= 2, got {override}")
        return int(override)
    key = frequency_label.strip().lower()
    if key.isdigit() and int(key) >= 2:
        return int(key)
    key = _ALIASES.get(key, key)
    if key not in PERIODS:
        accepted = ", ".join(sorted(PERIODS))
        raise DecompositionError(f"unknown frequency {frequency_label!r}; accepted labels: {accepted}")
    return PERIODS[key]


def _next_odd(x: float) -> int:
    n = int(math.ceil(x))
    return n if n % 2 else n + 1


@dataclass(frozen=True)
class StlConfig:
    seasonal: int = 7
    trend: int | None = None
    low_pass: int | None = None
    inner_iter: int = 2
    outer_iter: int = 1

    def resolved(self, period: int) -> "StlConfig":
        seasonal = _next_odd(max(self.seasonal, 3))
        trend = self.trend or _next_odd(1.5 * period / (1.0 - 1.5 / seasonal))
        low_pass = self.low_pass or _next_odd(period)
        return StlConfig(seasonal, _next_odd(trend), _next_odd(low_pass), self.inner_iter, self.outer_iter)

    def digest(self, period: int) -> str:
        payload = json.dumps({"period": period, **asdict(self.resolved(period))}, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Decomposition:
    trend: np.ndarray
    seasonal: np.ndarray
    remainder: np.ndarray
    period: int

    @property
    def timesteps(self) -> int:
        return self.trend.shape[0]

    def reconstruct(self) -> np.ndarray:
        return self.trend + self.seasonal + self.remainder


def _loess(y, q, positions, rw=None):
    """Local-linear loess of ``y`` (sampled at 0..n-1) evaluated at ``positions``."""
    n = y.shape[0]
    positions = np.asarray(positions, dtype=float)
    out = np.empty(positions.shape[0])
    width = min(q, n)
    offs = np.arange(width)
    for lo in range(0, positions.shape[0], max(1, _CHUNK // width)):
        x0 = positions[lo : lo + max(1, _CHUNK // width)]
        if q >= n:
            left = np.zeros(x0.shape[0], dtype=int)
        else:
            left = np.clip(np.round(x0).astype(int) - q // 2, 0, n - q)
        idx = left[:, None] + offs[None, :]
        h = np.maximum(x0 - left, left + width - 1 - x0)
        if q > n:
            h = h + (q - n) // 2
        h = np.maximum(h, 1e-12)
        r = np.abs(idx - x0[:, None]) / h[:, None]
        w = np.where(r <= 0.001, 1.0, np.where(r <= 0.999, (1.0 - r**3) ** 3, 0.0))
        if rw is not None:
            w = w * rw[idx]
        total = w.sum(axis=1, keepdims=True)
        w = w / np.where(total > 0, total, 1.0)
        c = (w * idx).sum(axis=1)
        b = (w * (idx - c[:, None]) ** 2).sum(axis=1)
        rng = n - 1
        slope_ok = np.sqrt(b) > 0.001 * rng
        adj = np.where(slope_ok, (x0 - c) / np.where(slope_ok, b, 1.0), 0.0)
        w = w * (1.0 + adj[:, None] * (idx - c[:, None]))
        vals = (w * y[idx]).sum(axis=1)
        # no usable weight: fall back to the nearest sample
        dead = total[:, 0] <= 0
        if dead.any():
            vals[dead] = y[np.clip(np.round(x0[dead]).astype(int), 0, n - 1)]
        out[lo : lo + x0.shape[0]] = vals
    return out


def _moving_average(x, w):
    c = np.cumsum(np.concatenate([[0.0], x]))
    return (c[w:] - c[:-w]) / w


def _stl_1d(y, period, cfg: StlConfig):
    n = y.shape[0]
    trend = np.zeros(n)
    seasonal = np.zeros(n)
    rw = None
    for outer in range(cfg.outer_iter + 1):
        for _ in range(cfg.inner_iter):
            detrended = y - trend
            cycle = np.empty(n + 2 * period)
            for k in range(period):
                sub = detrended[k::period]
                m = sub.shape[0]
                sub_rw = None if rw is None else rw[k::period]
                cycle[k::period][: m + 2] = _loess(sub, cfg.seasonal, np.arange(-1, m + 1), sub_rw)
            low = _moving_average(_moving_average(cycle, period), period)
            low = _moving_average(low, 3)
            low = _loess(low, cfg.low_pass, np.arange(n))
            seasonal = cycle[period : period + n] - low
            trend = _loess(y - seasonal, cfg.trend, np.arange(n), rw)
        if outer < cfg.outer_iter:
            resid = np.abs(y - trend - seasonal)
            h = 6.0 * np.median(resid)
            if h > 0:
                u = resid / h
                rw = np.where(u <= 0.001, 1.0, np.where(u <= 0.999, (1.0 - u**2) ** 2, 0.0))
            else:
                rw = np.ones(n)
    # center each full cycle of the seasonal component, pushing its level into the trend
    full = (n // period) * period
    if full:
        block_mean = seasonal[:full].reshape(-1, period).mean(axis=1)
        shift = np.repeat(block_mean, period)
        seasonal[:full] -= shift
        trend[:full] += shift
    return trend, seasonal


def stl_decompose(series: TimeSeries | np.ndarray, period: int, config: StlConfig | None = None) -> Decomposition:
    """Per-channel STL; the remainder is the exact residual."""
    values = series.values if isinstance(series, TimeSeries) else np.asarray(series, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if period < 2:
        raise DecompositionError(f"period must be >= 2, got {period}")
    if values.shape[0] < 2 * period:
        raise DecompositionError(f"need at least 2 periods ({2 * period} steps), got {values.shape[0]}")
    cfg = (config or StlConfig()).resolved(period)
    trend = np.empty_like(values)
    seasonal = np.empty_like(values)
    for c in range(values.shape[1]):
        trend[:, c], seasonal[:, c] = _stl_1d(values[:, c], period, cfg)
    remainder = values - trend - seasonal
    return Decomposition(trend, seasonal, remainder, int(period))


def _data_digest(values: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(values, dtype="<f8").tobytes()).hexdigest()[:16]


def save_decomposition(path, dec: Decomposition, config: StlConfig | None = None, data: np.ndarray | None = None):
    """Write the three components as CSV blocks under a small header."""
    cfg = config or StlConfig()
    lines = [
        f"# period={dec.period}",
        f"# config_hash={cfg.digest(dec.period)}",
        f"# data_hash={'' if data is None else _data_digest(data)}",
        f"# shape={dec.trend.shape[0]}x{dec.trend.shape[1]}",
    ]
    for name in ("trend", "seasonal", "remainder"):
        lines.append(f"[{name}]")
        for row in getattr(dec, name):
            lines.append(",".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_decomposition(path, period: int, config: StlConfig | None = None, data: np.ndarray | None = None):
    """Return the cached decomposition, or None when missing or stale."""
    path = Path(path)
    if not path.exists():
        return None
    cfg = config or StlConfig()
    header, blocks, current = {}, {}, None
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            header[key] = val
        elif line.startswith("["):
            current = line.strip("[]")
            blocks[current] = []
        elif line:
            blocks[current].append([float(v) for v in line.split(",")])
    if header.get("period") != str(period) or header.get("config_hash") != cfg.digest(period):
        return None
    if data is not None and header.get("data_hash") != _data_digest(data):
        return None
    return Decomposition(
        np.array(blocks["trend"]), np.array(blocks["seasonal"]), np.array(blocks["remainder"]), period
    )


def decompose_cached(series: TimeSeries, period: int, config: StlConfig | None = None, cache=None):
    if cache is not None:
        dec = load_decomposition(cache, period, config, series.values)
        if dec is not None:
            return dec
    dec = stl_decompose(series, period, config)
    if cache is not None:
        save_decomposition(cache, dec, config, series.values)
    return dec
