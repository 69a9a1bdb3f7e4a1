"""Lightweight forecasters, Adam, and the epoch trainer with per-epoch checkpoints.

A forecaster exposes four lifecycle operations (construct from a spec,
``train_epoch``, ``evaluate``, ``snapshot``/``restore``); anything honouring
them can be dropped into the search.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .series import WindowSet

logger = logging.getLogger(__name__)

Augmenter = Callable[[np.ndarray, np.ndarray, np.ndarray, np.random.Generator], tuple]

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ForecasterSpec:
    kind: str = "linear"
    lookback: int = 96
    horizon: int = 96
    channels: int = 1
    hidden: int = 64
    lr: float = 1e-3
    max_epochs: int = 10
    patience: int = 3
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.kind not in MODELS:
            raise ValueError(f"unknown forecaster kind {self.kind!r}; choose from {sorted(MODELS)}")
        if self.max_epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise ValueError("max_epochs, patience and batch_size must be >= 1")
        if min(self.lookback, self.horizon, self.channels) < 1:
            raise ValueError("lookback, horizon and channels must be >= 1")

    def digest(self) -> str:
        arch = {k: v for k, v in asdict(self).items() if k in ("kind", "lookback", "horizon", "channels", "hidden")}
        return hashlib.sha256(json.dumps(arch, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.step)


def adam_step(weights: np.ndarray, grads: np.ndarray, state: AdamState, lr: float) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns new arrays and leaves the inputs untouched."""
    if weights.shape != grads.shape or grads.shape != state.m.shape:
        raise ValueError(f"length mismatch: weights {weights.shape}, grads {grads.shape}, state {state.m.shape}")
    if not np.all(np.isfinite(grads)):
        raise TrainingError("non-finite gradient")
    step = state.step + 1
    m = ADAM_BETA1 * state.m + (1.0 - ADAM_BETA1) * grads
    v = ADAM_BETA2 * state.v + (1.0 - ADAM_BETA2) * grads * grads
    m_hat = m / (1.0 - ADAM_BETA1**step)
    v_hat = v / (1.0 - ADAM_BETA2**step)
    return weights - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS), AdamState(m, v, step)


@dataclass
class Checkpoint:
    epoch: int
    weights: np.ndarray
    optimizer_state: AdamState
    val_loss: float
    rng_state: dict
    spec_digest: str

    def save(self, path) -> None:
        """Little-endian float64 blob (weights, m, v) plus a JSON sidecar."""
        path = Path(path)
        blob = np.concatenate([self.weights, self.optimizer_state.m, self.optimizer_state.v]).astype("<f8")
        path.with_suffix(".bin").write_bytes(blob.tobytes())
        sidecar = {
            "spec_hash": self.spec_digest,
            "epoch": self.epoch,
            "val_loss": self.val_loss if math.isfinite(self.val_loss) else None,
            "n_params": int(self.weights.size),
            "adam_step": self.optimizer_state.step,
            "rng_state": self.rng_state,
        }
        path.with_suffix(".json").write_text(json.dumps(sidecar, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path, expected_digest: str | None = None) -> "Checkpoint":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
        if expected_digest is not None and meta["spec_hash"] != expected_digest:
            raise CheckpointError(f"{path}: checkpoint spec hash {meta['spec_hash']} != {expected_digest}")
        blob = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f8").astype(float)
        n = meta["n_params"]
        if blob.size != 3 * n:
            raise CheckpointError(f"{path}: expected {3 * n} values, found {blob.size}")
        val = math.inf if meta["val_loss"] is None else meta["val_loss"]
        state = AdamState(blob[n : 2 * n].copy(), blob[2 * n :].copy(), meta["adam_step"])
        return cls(meta["epoch"], blob[:n].copy(), state, val, meta["rng_state"], meta["spec_hash"])


class Forecaster:
    """Base class holding flat parameters, Adam state and the training seed stream."""

    def __init__(self, spec: ForecasterSpec):
        self.spec = spec
        self.rng = np.random.default_rng(spec.seed)
        self.params = self.init_params(self.rng)
        self.opt = AdamState.zeros(self.params.size)

    # model-specific -------------------------------------------------------
    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def predict(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def loss_and_grad(self, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
        raise NotImplementedError

    # lifecycle ------------------------------------------------------------
    @classmethod
    def from_spec(cls, spec: ForecasterSpec) -> "Forecaster":
        return MODELS[spec.kind](spec)

    def _check_x(self, x):
        s = self.spec
        if x.ndim != 3 or x.shape[1:] != (s.lookback, s.channels):
            raise ValueError(f"expected input (batch, {s.lookback}, {s.channels}), got {x.shape}")

    def train_epoch(
        self,
        windows: WindowSet,
        augment: Augmenter | None = None,
        aug_rng: np.random.Generator | None = None,
    ) -> float:
        """One pass in seeded shuffled order; returns the mean batch loss."""
        order = self.rng.permutation(len(windows))
        bs = self.spec.batch_size
        losses = []
        for start in range(0, len(order), bs):
            idx = order[start : start + bs]
            xb, yb = windows.x[idx], windows.y[idx]
            if augment is not None:
                xb, yb = augment(xb, yb, windows.origins[idx], aug_rng)
            # overflow is reported below as divergence
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grad = self.loss_and_grad(xb, yb)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite training loss at Adam step {self.opt.step}")
            self.params, self.opt = adam_step(self.params, grad, self.opt, self.spec.lr)
            losses.append(loss)
        return float(np.mean(losses))

    def forecast(self, windows: WindowSet, chunk: int = 4096) -> np.ndarray:
        return np.concatenate([self.predict(windows.x[i : i + chunk]) for i in range(0, len(windows), chunk)])

    def evaluate(self, windows: WindowSet) -> float:
        with np.errstate(over="ignore", invalid="ignore"):
            return float(np.mean((self.forecast(windows) - windows.y) ** 2))

    def evaluate_all(self, windows: WindowSet) -> dict[str, float]:
        err = self.forecast(windows) - windows.y
        return {"mse": float(np.mean(err**2)), "mae": float(np.mean(np.abs(err)))}

    def snapshot(self, epoch: int, val_loss: float) -> Checkpoint:
        return Checkpoint(
            epoch, self.params.copy(), self.opt.copy(), float(val_loss),
            _copy_state(self.rng.bit_generator.state), self.spec.digest(),
        )

    def restore(self, ckpt: Checkpoint) -> "Forecaster":
        if ckpt.spec_digest != self.spec.digest() or ckpt.weights.size != self.params.size:
            raise CheckpointError("checkpoint does not match this forecaster's architecture")
        self.params = ckpt.weights.copy()
        self.opt = ckpt.optimizer_state.copy()
        self.rng = np.random.default_rng()
        self.rng.bit_generator.state = _copy_state(ckpt.rng_state)
        return self

    @classmethod
    def from_checkpoint(cls, spec: ForecasterSpec, ckpt: Checkpoint) -> "Forecaster":
        return cls.from_spec(spec).restore(ckpt)


def _copy_state(state: dict) -> dict:
    return json.loads(json.dumps(state))


def _uniform(rng, fan_in, shape):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class LinearForecaster(Forecaster):
    """Per-channel affine map from the lookback window to the horizon."""

    def _shapes(self):
        s = self.spec
        return (s.channels, s.horizon, s.lookback), (s.channels, s.horizon)

    def init_params(self, rng):
        w_shape, b_shape = self._shapes()
        fan_in = self.spec.lookback
        return np.concatenate([_uniform(rng, fan_in, w_shape).ravel(), _uniform(rng, fan_in, b_shape).ravel()])

    def unpack(self, params=None):
        p = self.params if params is None else params
        w_shape, b_shape = self._shapes()
        nw = int(np.prod(w_shape))
        return p[:nw].reshape(w_shape), p[nw:].reshape(b_shape)

    def predict(self, x):
        x = np.asarray(x, dtype=float)
        self._check_x(x)
        w, b = self.unpack()
        return np.einsum("chl,blc->bhc", w, x) + b.T[None]

    def loss_and_grad(self, x, y):
        pred = self.predict(x)
        diff = pred - y
        loss = float(np.mean(diff**2))
        d = 2.0 * diff / diff.size
        gw = np.einsum("bhc,blc->chl", d, x)
        gb = d.sum(axis=0).T
        return loss, np.concatenate([gw.ravel(), gb.ravel()])


class MLPForecaster(Forecaster):
    """Shared two-layer network: flatten -> hidden ReLU -> horizon*channels."""

    def _sizes(self):
        s = self.spec
        d_in, d_out = s.lookback * s.channels, s.horizon * s.channels
        return d_in, s.hidden, d_out

    def init_params(self, rng):
        d_in, hid, d_out = self._sizes()
        return np.concatenate([
            _uniform(rng, d_in, (d_in, hid)).ravel(),
            _uniform(rng, d_in, hid),
            _uniform(rng, hid, (hid, d_out)).ravel(),
            _uniform(rng, hid, d_out),
        ])

    def unpack(self, params=None):
        p = self.params if params is None else params
        d_in, hid, d_out = self._sizes()
        i = 0
        w1 = p[i : i + d_in * hid].reshape(d_in, hid); i += d_in * hid
        b1 = p[i : i + hid]; i += hid
        w2 = p[i : i + hid * d_out].reshape(hid, d_out); i += hid * d_out
        b2 = p[i : i + d_out]
        return w1, b1, w2, b2

    def _forward(self, x):
        x = np.asarray(x, dtype=float)
        self._check_x(x)
        w1, b1, w2, b2 = self.unpack()
        flat = x.reshape(x.shape[0], -1)
        pre = flat @ w1 + b1
        hidden = np.maximum(pre, 0.0)
        out = hidden @ w2 + b2
        return flat, pre, hidden, out

    def predict(self, x):
        out = self._forward(x)[3]
        return out.reshape(out.shape[0], self.spec.horizon, self.spec.channels)

    def loss_and_grad(self, x, y):
        flat, pre, hidden, out = self._forward(x)
        diff = out - np.asarray(y, dtype=float).reshape(out.shape)
        loss = float(np.mean(diff**2))
        d_out = 2.0 * diff / diff.size
        _, _, w2, _ = self.unpack()
        g_w2 = hidden.T @ d_out
        g_b2 = d_out.sum(axis=0)
        d_pre = (d_out @ w2.T) * (pre > 0)
        g_w1 = flat.T @ d_pre
        g_b1 = d_pre.sum(axis=0)
        return loss, np.concatenate([g_w1.ravel(), g_b1, g_w2.ravel(), g_b2])


MODELS: dict[str, type[Forecaster]] = {"linear": LinearForecaster, "mlp": MLPForecaster}


@dataclass
class TrainReport:
    K: int
    train_losses: list[float]
    val_losses: list[float]
    checkpoints: list[Checkpoint]
    best_epoch: int

    @property
    def best_val(self) -> float:
        return self.val_losses[self.best_epoch - 1]

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "best_epoch": self.best_epoch,
            "train_losses": self.train_losses,
            "val_losses": self.val_losses,
        }


def early_stop_epoch(val_losses: Sequence[float], patience: int) -> tuple[int, int]:
    """Replay the stopping rule: returns (epochs run, best epoch), both 1-based."""
    best, best_epoch, bad = math.inf, 0, 0
    for epoch, v in enumerate(val_losses, start=1):
        if v < best:
            best, best_epoch, bad = v, epoch, 0
        else:
            bad += 1
            if bad >= patience:
                return epoch, best_epoch
    return len(val_losses), best_epoch


def train_full(
    spec: ForecasterSpec,
    train: WindowSet,
    val: WindowSet,
    augment: Augmenter | None = None,
    aug_seed: int = 0,
) -> TrainReport:
    """Train from initialization with early stopping; checkpoint every epoch (index 0 = init)."""
    if len(train) == 0 or len(val) == 0:
        raise TrainingError("empty train or validation windows")
    model = Forecaster.from_spec(spec)
    aug_rng = np.random.default_rng(aug_seed)
    checkpoints = [model.snapshot(0, model.evaluate(val))]
    train_losses, val_losses = [], []
    best, best_epoch, bad = math.inf, 0, 0
    for epoch in range(1, spec.max_epochs + 1):
        train_losses.append(model.train_epoch(train, augment, aug_rng))
        v = model.evaluate(val)
        if not math.isfinite(v):
            raise TrainingError(f"validation loss diverged at epoch {epoch}")
        val_losses.append(v)
        checkpoints.append(model.snapshot(epoch, v))
        logger.debug("epoch %d train %.6f val %.6f", epoch, train_losses[-1], v)
        if v < best:
            best, best_epoch, bad = v, epoch, 0
        else:
            bad += 1
            if bad >= spec.patience:
                break
    return TrainReport(len(val_losses), train_losses, val_losses, checkpoints, best_epoch)


@dataclass
class FineTuneResult:
    val_losses: list[float]
    rung_losses: dict[int, float] = field(default_factory=dict)
    final_loss: float = math.inf
    best_epoch: int = 0
    epochs: int = 0
    pruned_at: int | None = None
    best_checkpoint: Checkpoint | None = None


def fine_tune(
    start: Checkpoint,
    spec: ForecasterSpec,
    train: WindowSet,
    val: WindowSet,
    augment: Augmenter | None = None,
    epoch_budget: int = 1,
    rung_epochs: Sequence[int] = (),
    rung_callback: Callable[[int, float], bool] | None = None,
    aug_seed: int = 0,
    patience: int | None = None,
) -> FineTuneResult:
    """Continue training from ``start`` (weights, Adam state and seed stream restored).

    ``rung_callback(epoch, val_loss)`` is asked at each rung epoch and returns
    False to stop the run there. A pruned run's loss is its rung loss; a run
    that finishes reports its best validation loss.
    """
    model = Forecaster.from_checkpoint(spec, start)
    if epoch_budget <= 0:
        return FineTuneResult([], final_loss=start.val_loss, best_checkpoint=start)
    patience = spec.patience if patience is None else patience
    aug_rng = np.random.default_rng(aug_seed)
    rungs = set(rung_epochs)
    res = FineTuneResult([])
    best, bad = math.inf, 0
    for epoch in range(1, epoch_budget + 1):
        try:
            model.train_epoch(train, augment, aug_rng)
            v = model.evaluate(val)
            if not math.isfinite(v):
                raise TrainingError(f"validation loss diverged at fine-tune epoch {epoch}")
        except TrainingError as exc:
            exc.epochs = epoch
            raise
        res.val_losses.append(v)
        res.epochs = epoch
        if v < best:
            best, bad = v, 0
            res.best_epoch = epoch
            res.best_checkpoint = model.snapshot(start.epoch + epoch, v)
        else:
            bad += 1
        if epoch in rungs and rung_callback is not None:
            res.rung_losses[epoch] = v
            if not rung_callback(epoch, v):
                res.pruned_at = epoch
                res.final_loss = v
                return res
        if bad >= patience:
            break
    res.final_loss = best
    return res
