"""Time-series transform dictionary, magnitude mapping and sub-policy application.

Every transform works on the concatenated [x; y] window so input and target
are augmented consistently. The batched kernels take arrays shaped (B, N, C);
``apply_op`` / ``apply_subpolicy`` are single-window wrappers around them.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .decompose import Decomposition
from .series import WindowPair

DEFAULT_EPSILON = 1e-3


class AugmentError(ValueError):
    pass


class TransformKind(str, Enum):
    IDENTITY = "Identity"
    JITTER = "Jitter"
    TREND_UP = "TrendUp"
    TREND_DOWN = "TrendDown"
    SCALE_UP = "ScaleUp"
    SCALE_DOWN = "ScaleDown"
    SEASON_UP = "SeasonUp"
    SEASON_DOWN = "SeasonDown"
    SMOOTH = "Smooth"
    NOISE_SCALE = "NoiseScale"
    PERMUTATION = "Permutation"
    DTS = "DTS"
    WARP_UP = "WarpUp"
    WARP_DOWN = "WarpDown"
    MIXUP = "Mixup"
    FLIP = "Flip"
    REVERSE = "Reverse"


KINDS: tuple[TransformKind, ...] = tuple(TransformKind)


@dataclass(frozen=True)
class MagnitudeSpec:
    native_lo: float
    native_hi: float
    identity_at: str = "lo"
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if not self.native_lo < self.native_hi:
            raise AugmentError(f"empty native range [{self.native_lo}, {self.native_hi}]")
        if self.identity_at not in ("lo", "hi"):
            raise AugmentError(f"identity_at must be 'lo' or 'hi', got {self.identity_at!r}")


# native ranges; identity sits at the endpoint that leaves the series unchanged
MAGNITUDES: dict[TransformKind, MagnitudeSpec | None] = {
    TransformKind.IDENTITY: None,
    TransformKind.JITTER: MagnitudeSpec(0.0, 0.1, "lo"),
    TransformKind.TREND_UP: MagnitudeSpec(1.0, 10.0, "lo"),
    TransformKind.TREND_DOWN: MagnitudeSpec(0.0, 1.0, "hi"),
    TransformKind.SCALE_UP: MagnitudeSpec(1.0, 3.0, "lo"),
    TransformKind.SCALE_DOWN: MagnitudeSpec(0.3, 1.0, "hi"),
    TransformKind.SEASON_UP: MagnitudeSpec(1.0, 3.0, "lo"),
    TransformKind.SEASON_DOWN: MagnitudeSpec(0.0, 1.0, "hi"),
    TransformKind.SMOOTH: MagnitudeSpec(0.0, 11.0, "lo"),
    TransformKind.NOISE_SCALE: MagnitudeSpec(0.0, 1.0, "hi"),
    TransformKind.PERMUTATION: MagnitudeSpec(0.0, 0.3, "lo"),
    TransformKind.DTS: MagnitudeSpec(1.0, 5.0, "lo"),
    TransformKind.WARP_UP: MagnitudeSpec(1.0, 1.5, "lo"),
    TransformKind.WARP_DOWN: MagnitudeSpec(0.5, 1.0, "hi"),
    TransformKind.MIXUP: MagnitudeSpec(0.0, 0.5, "lo"),
    TransformKind.FLIP: MagnitudeSpec(0.0, 1.0, "lo"),
    TransformKind.REVERSE: MagnitudeSpec(0.0, 1.0, "lo"),
}

_NEEDS_TREND = frozenset({TransformKind.TREND_UP, TransformKind.TREND_DOWN})
_NEEDS_SEASON = frozenset({TransformKind.SEASON_UP, TransformKind.SEASON_DOWN})


def check_magnitude(m: float, epsilon: float = DEFAULT_EPSILON) -> float:
    m = float(m)
    if not (epsilon < m <= 1.0):
        raise AugmentError(f"magnitude {m} outside ({epsilon}, 1]")
    return m


def map_magnitude(spec: MagnitudeSpec, m: float) -> float:
    """Linear map of m in (eps, 1] onto the native range; m -> 0 is the identity endpoint."""
    m = check_magnitude(m, spec.epsilon)
    width = spec.native_hi - spec.native_lo
    if spec.identity_at == "lo":
        return spec.native_lo + m * width
    return spec.native_hi - m * width


def native_magnitude(kind: TransformKind, m: float, epsilon: float = DEFAULT_EPSILON) -> float:
    spec = MAGNITUDES[TransformKind(kind)]
    if spec is None:
        check_magnitude(m, epsilon)
        return 0.0
    if spec.epsilon != epsilon:
        spec = MagnitudeSpec(spec.native_lo, spec.native_hi, spec.identity_at, epsilon)
    return map_magnitude(spec, m)


@dataclass(frozen=True)
class OpSpec:
    kind: TransformKind
    m: float

    def __post_init__(self):
        object.__setattr__(self, "kind", TransformKind(self.kind))
        object.__setattr__(self, "m", float(self.m))

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "m": self.m}


@dataclass(frozen=True)
class SubPolicy:
    ops: tuple[OpSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(op if isinstance(op, OpSpec) else OpSpec(**op) for op in self.ops))

    @property
    def n(self) -> int:
        return len(self.ops)

    def to_dict(self) -> dict:
        return {"ops": [op.to_dict() for op in self.ops]}

    def label(self) -> str:
        return " -> ".join(f"{op.kind.value}({op.m:.3f})" for op in self.ops)


@dataclass
class PolicyDistribution:
    """Uniform mixture over the selected sub-policies."""

    subpolicies: list[SubPolicy] = field(default_factory=list)
    n: int = 2
    epsilon: float = DEFAULT_EPSILON

    def __len__(self) -> int:
        return len(self.subpolicies)

    def to_dict(self) -> dict:
        return {"subpolicies": [sp.to_dict() for sp in self.subpolicies], "n": self.n, "epsilon": self.epsilon}

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyDistribution":
        eps = float(d.get("epsilon", DEFAULT_EPSILON))
        n = int(d.get("n", 2))
        sps = []
        for raw in d.get("subpolicies", []):
            ops = tuple(OpSpec(TransformKind(o["kind"]), float(o["m"])) for o in raw["ops"])
            if len(ops) != n:
                raise AugmentError(f"sub-policy has {len(ops)} ops, expected n={n}")
            for op in ops:
                check_magnitude(op.m, eps)
            sps.append(SubPolicy(ops))
        return cls(sps, n, eps)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "PolicyDistribution":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise AugmentError(f"{path}: malformed policy file ({exc})") from None


@dataclass
class AugmentContext:
    """What a transform may need beyond the window itself.

    ``pair_source`` returns a partner window (same shape) for Mixup, or None.
    """

    decomposition: Decomposition | None = None
    rng_seed: int = 0
    pair_source: Callable[[np.random.Generator], np.ndarray | None] | None = None
    origin_index: int = 0
    epsilon: float = DEFAULT_EPSILON


# ---------------------------------------------------------------------------
# batched kernels, z is (B, N, C)


def _component_slices(comp: np.ndarray, origins: np.ndarray, length: int) -> np.ndarray:
    origins = np.asarray(origins, dtype=int)
    if origins.min() < 0 or origins.max() + length > comp.shape[0]:
        raise AugmentError("window origin outside the stored decomposition")
    return comp[origins[:, None] + np.arange(length)[None, :]]


def _jitter(z, sigma, rng):
    lo = z.min(axis=1, keepdims=True)
    span = z.max(axis=1, keepdims=True) - lo
    span = np.where(span > 0, span, 1.0)
    unit = (z - lo) / span + rng.normal(0.0, sigma, size=z.shape)
    return unit * span + lo


def _smooth(z, native):
    n = z.shape[1]
    w = 2 * int(math.floor(native / 2.0)) + 1
    w = min(max(w, 1), n if n % 2 else n - 1)
    if w <= 1:
        return z.copy()
    half = w // 2
    padded = np.pad(z, ((0, 0), (half, half), (0, 0)), mode="reflect")
    c = np.cumsum(padded, axis=1)
    c = np.concatenate([np.zeros_like(c[:, :1]), c], axis=1)
    return (c[:, w:] - c[:, :-w]) / w


def second_difference(z):
    """High-pass (-1, 2, -1)/2 response with reflect padding along time."""
    if z.shape[1] < 2:
        return np.zeros_like(z)
    padded = np.pad(z, ((0, 0), (1, 1), (0, 0)), mode="reflect")
    return (2.0 * padded[:, 1:-1] - padded[:, :-2] - padded[:, 2:]) / 2.0


def _swap_starts(n, ell, rng):
    for _ in range(100):
        s1, s2 = (int(v) for v in rng.integers(0, n - ell + 1, size=2))
        if abs(s1 - s2) >= ell:
            return s1, s2
    return None


def _permute(z, native, rng):
    out = z.copy()
    n = z.shape[1]
    base = min(int(round(native * n)), n // 2)
    for b in range(z.shape[0]):
        ell, starts = base, None
        while ell >= 1 and starts is None:
            starts = _swap_starts(n, ell, rng)
            if starts is None:
                ell -= 1
        if starts is None:
            continue
        s1, s2 = starts
        out[b, s1 : s1 + ell] = z[b, s2 : s2 + ell]
        out[b, s2 : s2 + ell] = z[b, s1 : s1 + ell]
    return out


def dts_time_map(n: int, native: float, rng: np.random.Generator) -> np.ndarray:
    """Source positions sampled by each output step under dynamic time stretching.

    Equal segments are taken in adjacent pairs; one segment of each pair is
    stretched and its partner compressed so that their length ratio is s,
    s ~ U[1, native], while the pair's total span is preserved.
    """
    nseg = int(math.ceil(native)) + 1
    knots = np.linspace(0.0, n - 1.0, nseg + 1)
    out_knots = knots.copy()
    for i in range(0, nseg - 1, 2):
        s = rng.uniform(1.0, native) if native > 1.0 else 1.0
        p, q = knots[i], knots[i + 2]
        frac = s / (1.0 + s) if rng.random() < 0.5 else 1.0 / (1.0 + s)
        out_knots[i + 1] = p + (q - p) * frac
    return np.interp(np.arange(n, dtype=float), out_knots, knots)


def _resample_rows(z2d, positions):
    """Linear interpolation of every column of (N, C) at fractional ``positions``."""
    n = z2d.shape[0]
    lo = np.clip(np.floor(positions).astype(int), 0, n - 1)
    hi = np.minimum(lo + 1, n - 1)
    frac = (positions - lo)[:, None]
    return z2d[lo] * (1.0 - frac) + z2d[hi] * frac


def _dts(z, native, rng):
    out = np.empty_like(z)
    for b in range(z.shape[0]):
        out[b] = _resample_rows(z[b], dts_time_map(z.shape[1], native, rng))
    return out


def warp_matrix(n: int, factor: float) -> np.ndarray:
    """(N, N) operator (None when it is the identity): resample to round(factor*N) points and back, endpoints fixed."""
    m = max(2, int(round(factor * n)))
    if m == n or n < 2:
        return None

    def interp_matrix(src, dst):
        pos = np.linspace(0.0, src - 1.0, dst)
        lo = np.clip(np.floor(pos).astype(int), 0, src - 1)
        hi = np.minimum(lo + 1, src - 1)
        frac = pos - lo
        a = np.zeros((dst, src))
        a[np.arange(dst), lo] += 1.0 - frac
        a[np.arange(dst), hi] += frac
        return a

    return interp_matrix(m, n) @ interp_matrix(n, m)


def _warp(z, factor):
    mat = warp_matrix(z.shape[1], factor)
    if mat is None:
        return z.copy()
    return np.einsum("ij,bjc->bic", mat, z)


def apply_batch(
    kind: TransformKind,
    native: float,
    z: np.ndarray,
    rng: np.random.Generator,
    origins: np.ndarray | None = None,
    decomposition: Decomposition | None = None,
    partners: np.ndarray | None = None,
) -> np.ndarray:
    """Apply one transform at a native magnitude to a (B, N, C) batch."""
    kind = TransformKind(kind)
    if kind in _NEEDS_TREND or kind in _NEEDS_SEASON:
        if decomposition is None or origins is None:
            raise AugmentError(f"{kind.value} needs a precomputed decomposition and window origins")
    if kind is TransformKind.IDENTITY:
        return z.copy()
    if kind is TransformKind.JITTER:
        return _jitter(z, native, rng)
    if kind in _NEEDS_TREND:
        trend = _component_slices(decomposition.trend, origins, z.shape[1])
        return (z - trend) + native * trend
    if kind in (TransformKind.SCALE_UP, TransformKind.SCALE_DOWN):
        return z * native
    if kind in _NEEDS_SEASON:
        seasonal = _component_slices(decomposition.seasonal, origins, z.shape[1])
        return z + (native - 1.0) * seasonal
    if kind is TransformKind.SMOOTH:
        return _smooth(z, native)
    if kind is TransformKind.NOISE_SCALE:
        h = second_difference(z)
        return z - h + native * h
    if kind is TransformKind.PERMUTATION:
        return _permute(z, native, rng)
    if kind is TransformKind.DTS:
        return _dts(z, native, rng)
    if kind in (TransformKind.WARP_UP, TransformKind.WARP_DOWN):
        return _warp(z, native)
    if kind is TransformKind.MIXUP:
        if partners is None:
            partners = z[rng.integers(0, z.shape[0], size=z.shape[0])]
        return (1.0 - native) * z + native * partners
    if kind is TransformKind.FLIP:
        if native < 0.5:
            return z.copy()
        return z.max(axis=1, keepdims=True) + z.min(axis=1, keepdims=True) - z
    if kind is TransformKind.REVERSE:
        if native < 0.5:
            return z.copy()
        return z[:, ::-1].copy()
    raise AugmentError(f"unhandled transform {kind}")


def augment_arrays(
    sp: SubPolicy,
    x: np.ndarray,
    y: np.ndarray,
    rng: np.random.Generator,
    origins: np.ndarray | None = None,
    decomposition: Decomposition | None = None,
    epsilon: float = DEFAULT_EPSILON,
) -> tuple[np.ndarray, np.ndarray]:
    """Apply a sub-policy left to right to a batch of (x, y) windows."""
    lookback = x.shape[1]
    z = np.concatenate([x, y], axis=1)
    for op in sp.ops:
        z = apply_batch(op.kind, native_magnitude(op.kind, op.m, epsilon), z, rng, origins, decomposition)
    return z[:, :lookback], z[:, lookback:]


def apply_op(op: OpSpec, window: np.ndarray, ctx: AugmentContext) -> np.ndarray:
    window = np.asarray(window, dtype=float)
    if not np.all(np.isfinite(window)):
        raise AugmentError("window contains non-finite values")
    rng = np.random.default_rng(ctx.rng_seed)
    partners = None
    if op.kind is TransformKind.MIXUP:
        partner = ctx.pair_source(rng) if ctx.pair_source is not None else None
        partners = (window if partner is None else np.asarray(partner, dtype=float))[None]
    out = apply_batch(
        op.kind,
        native_magnitude(op.kind, op.m, ctx.epsilon),
        window[None],
        rng,
        np.array([ctx.origin_index]),
        ctx.decomposition,
        partners,
    )
    return out[0]


def apply_subpolicy(sp: SubPolicy, pair: WindowPair, ctx: AugmentContext) -> WindowPair:
    rng = np.random.default_rng(ctx.rng_seed)
    z = pair.joined()[None].astype(float)
    origins = np.array([pair.origin_index])
    for op in sp.ops:
        partners = None
        if op.kind is TransformKind.MIXUP:
            partner = ctx.pair_source(rng) if ctx.pair_source is not None else None
            partners = z if partner is None else np.asarray(partner, dtype=float)[None]
        native = native_magnitude(op.kind, op.m, ctx.epsilon)
        z = apply_batch(op.kind, native, z, rng, origins, ctx.decomposition, partners)
    return WindowPair(z[0, : pair.lookback], z[0, pair.lookback :], pair.origin_index)


def draw_subpolicy(dist: PolicyDistribution, rng: np.random.Generator) -> SubPolicy:
    if not dist.subpolicies:
        raise AugmentError("empty policy distribution; fall back to no augmentation")
    return dist.subpolicies[int(rng.integers(len(dist.subpolicies)))]


def sample_and_apply(dist: PolicyDistribution, batch: Sequence[WindowPair], ctx: AugmentContext) -> list[WindowPair]:
    """Draw one sub-policy for the whole batch and apply it to every pair."""
    rng = np.random.default_rng(ctx.rng_seed)
    sp = draw_subpolicy(dist, rng)
    x = np.stack([p.x for p in batch])
    y = np.stack([p.y for p in batch])
    origins = np.array([p.origin_index for p in batch])
    xa, ya = augment_arrays(sp, x, y, rng, origins, ctx.decomposition, dist.epsilon)
    return [WindowPair(xa[i], ya[i], int(origins[i])) for i in range(len(batch))]


def policy_augmenter(dist: PolicyDistribution | SubPolicy, decomposition: Decomposition | None):
    """Per-batch callback for the trainer: (x, y, origins, rng) -> (x, y)."""
    if isinstance(dist, SubPolicy):
        dist = PolicyDistribution([dist], dist.n)

    def augment(x, y, origins, rng):
        sp = draw_subpolicy(dist, rng)
        return augment_arrays(sp, x, y, rng, origins, decomposition, dist.epsilon)

    return augment


def ops_histogram(trials: Sequence, top_fraction: float = 1.0) -> dict[TransformKind, float]:
    """Percentage share of each transform among the ops of the best trials."""
    ranked = [t for t in trials if t.final_loss is not None and math.isfinite(t.final_loss)]
    if not ranked:
        raise AugmentError("no finished trials to summarize")
    if not 0.0 < top_fraction <= 1.0:
        raise AugmentError(f"top_fraction must lie in (0, 1], got {top_fraction}")
    ranked.sort(key=lambda t: (t.final_loss, t.trial_id))
    keep = max(1, math.ceil(top_fraction * len(ranked) - 1e-9))
    counts: dict[TransformKind, int] = {}
    for t in ranked[:keep]:
        for op in t.subpolicy.ops:
            counts[op.kind] = counts.get(op.kind, 0) + 1
    total = sum(counts.values())
    return {k: 100.0 * counts[k] / total for k in KINDS if k in counts}
