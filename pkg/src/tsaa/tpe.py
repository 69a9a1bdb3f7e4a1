"""Independent (flat) Tree-structured Parzen Estimator over a mixed search space.

Observations are split at the gamma-quantile of the loss into a "good" set
modelling l(x) and a "bad" set modelling g(x). Candidates are drawn from l and
the one maximizing l(x)/g(x), the EI-optimal choice under this surrogate, is
returned. Every dimension is always active, so each is handled independently.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .augment import DEFAULT_EPSILON, KINDS, OpSpec, SubPolicy, TransformKind

DEFAULT_GAMMA = 0.25
DEFAULT_CANDIDATES = 24
PRIOR_WEIGHT = 1.0


class TPEError(ValueError):
    pass


@dataclass(frozen=True)
class Categorical:
    name: str
    choices: tuple


@dataclass(frozen=True)
class Continuous:
    """Half-open interval (low, high]."""

    name: str
    low: float
    high: float

    @property
    def width(self) -> float:
        return self.high - self.low


@dataclass(frozen=True)
class SearchSpace:
    dims: tuple

    @classmethod
    def policy_space(cls, n: int = 2, epsilon: float = DEFAULT_EPSILON) -> "SearchSpace":
        dims = []
        for j in range(n):
            dims.append(Categorical(f"kind_{j}", tuple(k.value for k in KINDS)))
            dims.append(Continuous(f"m_{j}", epsilon, 1.0))
        return cls(tuple(dims))

    def sample_uniform(self, rng: np.random.Generator) -> dict[str, Any]:
        params = {}
        for d in self.dims:
            if isinstance(d, Categorical):
                params[d.name] = d.choices[int(rng.integers(len(d.choices)))]
            else:
                params[d.name] = float(d.high - rng.uniform(0.0, d.width))
        return params

    def contains(self, params: dict) -> bool:
        for d in self.dims:
            v = params.get(d.name)
            if isinstance(d, Categorical):
                if v not in d.choices:
                    return False
            elif v is None or not d.low < v <= d.high:
                return False
        return True

    @staticmethod
    def to_subpolicy(params: dict, n: int) -> SubPolicy:
        return SubPolicy(tuple(OpSpec(TransformKind(params[f"kind_{j}"]), params[f"m_{j}"]) for j in range(n)))

    @staticmethod
    def from_subpolicy(sp: SubPolicy) -> dict:
        params = {}
        for j, op in enumerate(sp.ops):
            params[f"kind_{j}"] = op.kind.value
            params[f"m_{j}"] = op.m
        return params


@dataclass(frozen=True)
class Observation:
    params: dict
    loss: float
    trial_id: int


@dataclass
class ObservationHistory:
    """Append-only (params, loss) record; appends and snapshots are serialized by a lock."""

    observations: list[Observation] = field(default_factory=list)
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise TPEError(f"gamma must lie in (0, 1), got {self.gamma}")
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.observations)

    def append(self, params: dict, loss: float, trial_id: int) -> Observation:
        obs = Observation(dict(params), float(loss), int(trial_id))
        with self._lock:
            self.observations.append(obs)
        return obs

    def snapshot(self) -> "ObservationHistory":
        with self._lock:
            return ObservationHistory(list(self.observations), self.gamma)

    def save_jsonl(self, path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for o in self.snapshot().observations:
                loss = o.loss if math.isfinite(o.loss) else None
                fh.write(json.dumps({"trial_id": o.trial_id, "loss": loss, "params": o.params}, sort_keys=True) + "\n")

    @classmethod
    def load_jsonl(cls, path, gamma: float = DEFAULT_GAMMA) -> "ObservationHistory":
        hist = cls(gamma=gamma)
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                rec = json.loads(line)
                loss = math.inf if rec["loss"] is None else rec["loss"]
                hist.append(rec["params"], loss, rec["trial_id"])
        return hist


def split(history: ObservationHistory) -> tuple[list[Observation], list[Observation]]:
    """Good = the ceil(gamma*N) best finite observations (ties to the earlier trial), bad = the rest."""
    obs = list(history.observations)
    if len(obs) < 2:
        raise TPEError(f"need at least 2 observations to split, got {len(obs)}")
    ranked = sorted(obs, key=lambda o: (not math.isfinite(o.loss), o.loss, o.trial_id))
    n_finite = sum(math.isfinite(o.loss) for o in obs)
    n_good = min(max(1, math.ceil(history.gamma * len(obs) - 1e-12)), len(obs) - 1, n_finite)
    return ranked[:n_good], ranked[n_good:]


class ParzenContinuous:
    """Truncated Gaussian mixture on (low, high] with a broad prior component."""

    def __init__(self, values: Sequence[float], low: float, high: float, prior_weight: float = PRIOR_WEIGHT):
        values = np.asarray(values, dtype=float)
        if values.size == 0:
            raise TPEError("Parzen estimator needs at least one value")
        width = high - low
        n = values.size
        if n == 1:
            nn = np.array([width])
        else:
            order = np.argsort(values)
            srt = values[order]
            gaps = np.diff(srt)
            left = np.concatenate([[np.inf], gaps])
            right = np.concatenate([gaps, [np.inf]])
            nn = np.empty(n)
            nn[order] = np.minimum(left, right)
        sigmas = np.clip(nn, width / min(100, n), width)
        self.mus = np.concatenate([values, [0.5 * (low + high)]])
        self.sigmas = np.concatenate([sigmas, [width]])
        w = np.concatenate([np.ones(n), [prior_weight]])
        self.weights = w / w.sum()
        self.low, self.high = low, high
        self._a = ndtr((low - self.mus) / self.sigmas)
        self._b = ndtr((high - self.mus) / self.sigmas)
        self._mass = self._b - self._a

    def pdf(self, q) -> np.ndarray:
        q = np.atleast_1d(np.asarray(q, dtype=float))
        z = (q[:, None] - self.mus[None, :]) / self.sigmas[None, :]
        comp = np.exp(-0.5 * z * z) / (math.sqrt(2 * math.pi) * self.sigmas[None, :] * self._mass[None, :])
        dens = comp @ self.weights
        return np.where((q > self.low) & (q <= self.high), dens, 0.0)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        idx = rng.choice(self.mus.size, size=size, p=self.weights)
        u = self._a[idx] + rng.uniform(size=size) * self._mass[idx]
        u = np.clip(u, 1e-300, 1.0 - 1e-16)
        x = self.mus[idx] + self.sigmas[idx] * ndtri(u)
        # keep strictly inside (low, high]
        return np.clip(x, np.nextafter(self.low, np.inf), self.high)


class ParzenCategorical:
    def __init__(self, chosen: Sequence, choices: Sequence, prior_weight: float = PRIOR_WEIGHT):
        self.choices = tuple(choices)
        index = {c: i for i, c in enumerate(self.choices)}
        counts = np.zeros(len(self.choices))
        for c in chosen:
            counts[index[c]] += 1
        self.probs = (counts + prior_weight) / (counts.sum() + prior_weight * len(self.choices))

    def pmf(self, query) -> float:
        return float(self.probs[self.choices.index(query)])

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.choice(len(self.choices), size=size, p=self.probs)


def density_continuous(values: Sequence[float], query: float, low: float = DEFAULT_EPSILON, high: float = 1.0) -> float:
    return float(ParzenContinuous(values, low, high).pdf(query)[0])


def density_categorical(choices: Sequence, query, categories: Sequence = tuple(k.value for k in KINDS)) -> float:
    return ParzenCategorical([TransformKind(c).value if isinstance(c, TransformKind) else c for c in choices],
                             categories).pmf(query.value if isinstance(query, TransformKind) else query)


def suggest(
    history: ObservationHistory,
    space: SearchSpace,
    rng: np.random.Generator,
    n_candidates: int = DEFAULT_CANDIDATES,
    n_startup: int = 0,
) -> dict[str, Any]:
    """Propose the next parameter vector (uniform random during start-up)."""
    snap = history.snapshot()
    if len(snap) < max(n_startup, 2):
        return space.sample_uniform(rng)
    good, bad = split(snap)
    if not good:
        return space.sample_uniform(rng)
    params = {}
    for d in space.dims:
        gv = [o.params[d.name] for o in good]
        bv = [o.params[d.name] for o in bad]
        if isinstance(d, Categorical):
            lo, hi = ParzenCategorical(gv, d.choices), ParzenCategorical(bv, d.choices)
            cand = lo.sample(rng, n_candidates)
            score = np.log(lo.probs[cand]) - np.log(hi.probs[cand])
            params[d.name] = d.choices[int(cand[int(np.argmax(score))])]
        else:
            lo, hi = ParzenContinuous(gv, d.low, d.high), ParzenContinuous(bv, d.low, d.high)
            cand = lo.sample(rng, n_candidates)
            score = np.log(lo.pdf(cand)) - np.log(hi.pdf(cand))
            params[d.name] = float(cand[int(np.argmax(score))])
    return params
