"""Augmentation policy search: shared weights, TPE/ASHA trial loop, top-k selection, final fine-tune."""

from __future__ import annotations

import logging
import math
import threading
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .asha import Decision, RungTable, Trial, TrialStatus, budget_bound, budget_spent, make_schedule
from .augment import DEFAULT_EPSILON, PolicyDistribution, policy_augmenter
from .decompose import StlConfig, decompose_cached, infer_period
from .forecast import (
    Checkpoint,
    Forecaster,
    ForecasterSpec,
    TrainingError,
    TrainReport,
    fine_tune,
    train_full,
)
from .series import Dataset, SplitSpec, TimeSeries, prepare_dataset, relative_improvement
from .tpe import ObservationHistory, SearchSpace, suggest

logger = logging.getLogger(__name__)

MODES = ("tsaa", "random-search", "baseline-only")


@dataclass(frozen=True)
class TsaaConfig:
    beta: float = 0.5
    T_max: int = 100
    k: int = 3
    n: int = 2
    eta: int = 3
    r: int = 1
    exploration_fraction: float = 0.3
    epsilon: float = DEFAULT_EPSILON
    seed: int = 0
    gamma: float = 0.25
    n_candidates: int = 24
    include_pruned: bool = True
    workers: int = 1
    # absolute start-up trial count; overrides exploration_fraction when set
    n_startup: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}")
        if self.T_max < 1 or self.k < 1 or self.n < 1 or self.r < 1 or self.workers < 1:
            raise ValueError("T_max, k, n, r and workers must be >= 1")
        if self.eta < 2:
            raise ValueError("eta must be >= 2")
        if not 0.0 <= self.exploration_fraction <= 1.0:
            raise ValueError("exploration_fraction must lie in [0, 1]")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")

    @property
    def startup_trials(self) -> int:
        if self.n_startup is not None:
            return self.n_startup
        return math.ceil(self.exploration_fraction * self.T_max - 1e-9)

    def to_dict(self) -> dict:
        return asdict(self)


def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def prepare_search_data(
    series: TimeSeries,
    lookback: int,
    horizon: int,
    split: SplitSpec | None = None,
    period: int | None = None,
    stride: int = 1,
    stl: StlConfig | None = None,
    cache=None,
) -> Dataset:
    """Window and standardize, then decompose the standardized train split once."""
    data = prepare_dataset(series, lookback, horizon, split, stride)
    period = infer_period(series.frequency, period)
    data.decomposition = decompose_cached(data.train_series, period, stl, cache)
    data.meta["period"] = period
    return data


@dataclass
class SharedWeights:
    omega_share: Checkpoint
    R: int
    K: int
    baseline_val: float
    baseline_test: dict
    report: TrainReport


def shared_epoch(beta: float, K: int) -> tuple[int, int]:
    """(epoch of the shared weights, fine-tune resource R)."""
    e = math.floor(beta * K)
    return e, K - e


def step1_shared_weights(spec: ForecasterSpec, data: Dataset, cfg: TsaaConfig) -> SharedWeights:
    """Train the un-augmented baseline to completion and keep the floor(beta*K) checkpoint."""
    report = train_full(spec, data.train, data.val)
    share_epoch, R = shared_epoch(cfg.beta, report.K)
    if share_epoch == 0:
        logger.warning("floor(beta*K) = 0: sharing the initialization checkpoint")
    best = Forecaster.from_checkpoint(spec, report.checkpoints[report.best_epoch])
    return SharedWeights(
        omega_share=report.checkpoints[share_epoch],
        R=R,
        K=report.K,
        baseline_val=report.best_val,
        baseline_test=best.evaluate_all(data.test),
        report=report,
    )


class _SearchState:
    def __init__(self, cfg: TsaaConfig, R: int):
        self.schedule = make_schedule(cfg.r, max(R, cfg.r), cfg.eta)
        self.table = RungTable(cfg.eta)
        self.history = ObservationHistory(gamma=cfg.gamma)
        self.space = SearchSpace.policy_space(cfg.n, cfg.epsilon)
        self.lock = threading.Lock()


def _propose(state: _SearchState, cfg: TsaaConfig, trial_id: int, mode: str) -> tuple[dict, str]:
    rng = np.random.default_rng(_seed(cfg.seed, 1, trial_id))
    if mode == "random" or len(state.history) < max(cfg.startup_trials, 2):
        return state.space.sample_uniform(rng), "random"
    params = suggest(state.history, state.space, rng, cfg.n_candidates, cfg.startup_trials)
    return params, "tpe"


def run_trial(
    trial_id: int,
    params: dict,
    source: str,
    shared: SharedWeights,
    spec: ForecasterSpec,
    data: Dataset,
    cfg: TsaaConfig,
    state: _SearchState,
) -> Trial:
    """Fine-tune the shared weights under one sub-policy, reporting to ASHA at each rung."""
    sp = SearchSpace.to_subpolicy(params, cfg.n)
    trial = Trial(trial_id, sp, params=params, source=source)

    def at_rung(epoch: int, loss: float) -> bool:
        return state.table.decide(epoch, trial_id, loss) is Decision.PROMOTE

    try:
        res = fine_tune(
            shared.omega_share, spec, data.train, data.val,
            augment=policy_augmenter(sp, data.decomposition),
            epoch_budget=shared.R,
            rung_epochs=state.schedule.rung_epochs,
            rung_callback=at_rung,
            aug_seed=_seed(cfg.seed, 2, trial_id),
        )
    except TrainingError as exc:
        logger.warning("trial %d diverged: %s", trial_id, exc)
        trial.status = TrialStatus.FAILED
        trial.final_loss = math.inf
        trial.epochs_spent = getattr(exc, "epochs", shared.R)
        return trial
    trial.rung_losses = dict(res.rung_losses)
    trial.val_losses = list(res.val_losses)
    trial.epochs_spent = res.epochs
    trial.final_loss = res.final_loss
    if res.pruned_at is not None:
        trial.status, trial.pruned_at = TrialStatus.PRUNED, res.pruned_at
    else:
        trial.status = TrialStatus.COMPLETED
    return trial


def _record(state: _SearchState, cfg: TsaaConfig, trial: Trial) -> None:
    if trial.status is TrialStatus.PRUNED and not cfg.include_pruned:
        return
    state.history.append(trial.params, trial.final_loss, trial.trial_id)


def step2_search(
    shared: SharedWeights,
    spec: ForecasterSpec,
    data: Dataset,
    cfg: TsaaConfig,
    mode: str = "tpe",
    on_trial: Callable[[Trial], None] | None = None,
    previous: Sequence[Trial] = (),
) -> list[Trial]:
    """Run T_max trials; ``previous`` replays already-finished trials so a search can resume."""
    if shared.R < 1:
        raise ValueError("fine-tune resource R must be >= 1")
    if mode not in ("tpe", "random"):
        raise ValueError(f"unknown search mode {mode!r}")
    state = _SearchState(cfg, shared.R)
    trials: list[Trial] = []
    for t in sorted(previous, key=lambda t: t.trial_id):
        for rung, loss in sorted(t.rung_losses.items()):
            state.table.decide(rung, t.trial_id, loss)
        _record(state, cfg, t)
        trials.append(t)
    pending = range(len(trials), cfg.T_max)

    if cfg.workers == 1:
        for trial_id in pending:
            params, source = _propose(state, cfg, trial_id, mode)
            trial = run_trial(trial_id, params, source, shared, spec, data, cfg, state)
            _record(state, cfg, trial)
            trials.append(trial)
            logger.info("trial %d %s %s loss=%.6g epochs=%d", trial_id, trial.status.value,
                        trial.subpolicy.label(), trial.final_loss, trial.epochs_spent)
            if on_trial:
                on_trial(trial)
        return trials

    todo = iter(pending)
    with ThreadPoolExecutor(cfg.workers) as pool:
        running = {}

        def submit_next() -> bool:
            trial_id = next(todo, None)
            if trial_id is None:
                return False
            params, source = _propose(state, cfg, trial_id, mode)
            running[pool.submit(run_trial, trial_id, params, source, shared, spec, data, cfg, state)] = trial_id
            return True

        for _ in range(cfg.workers):
            if not submit_next():
                break
        while running:
            done, _ = wait(running, return_when=FIRST_COMPLETED)
            for fut in done:
                running.pop(fut)
                trial = fut.result()
                _record(state, cfg, trial)
                trials.append(trial)
                if on_trial:
                    on_trial(trial)
                submit_next()
    return sorted(trials, key=lambda t: t.trial_id)


def random_search_mode(shared, spec, data, cfg, on_trial=None, previous=()) -> list[Trial]:
    return step2_search(shared, spec, data, cfg, mode="random", on_trial=on_trial, previous=previous)


def select_policy(
    trials: Sequence[Trial], baseline_val: float, k: int, n: int = 2, epsilon: float = DEFAULT_EPSILON
) -> PolicyDistribution:
    """Up to k best completed trials that beat the baseline validation loss."""
    done = [t for t in trials if t.status is TrialStatus.COMPLETED and t.final_loss < baseline_val]
    done.sort(key=lambda t: (t.final_loss, t.trial_id))
    return PolicyDistribution([t.subpolicy for t in done[:k]], n, epsilon)


@dataclass
class TsaaResult:
    p_star: PolicyDistribution
    baseline_val: float
    baseline_test: dict
    trials: list[Trial]
    final_val: float
    final_test_mse: float
    final_test_mae: float
    epochs_spent: int
    K: int
    R: int
    mode: str = "tsaa"
    extra: dict = field(default_factory=dict)

    @property
    def improvement_mse(self) -> float:
        return relative_improvement(self.baseline_test["mse"], self.final_test_mse)

    @property
    def improvement_mae(self) -> float:
        return relative_improvement(self.baseline_test["mae"], self.final_test_mae)

    def best_trial_loss(self) -> float:
        losses = [t.final_loss for t in self.trials if t.status is TrialStatus.COMPLETED]
        return min(losses) if losses else math.inf

    def to_dict(self, T_max: int, beta: float) -> dict:
        return {
            "mode": self.mode,
            "K": self.K,
            "R": self.R,
            "baseline_val": self.baseline_val,
            "baseline_test_mse": self.baseline_test["mse"],
            "baseline_test_mae": self.baseline_test["mae"],
            "final_val": self.final_val,
            "final_test_mse": self.final_test_mse,
            "final_test_mae": self.final_test_mae,
            "relative_improvement_mse": self.improvement_mse,
            "relative_improvement_mae": self.improvement_mae,
            "epochs_spent": self.epochs_spent,
            "budget_bound": budget_bound(beta, self.K, T_max),
            "n_trials": len(self.trials),
            "n_pruned": sum(t.status is TrialStatus.PRUNED for t in self.trials),
            "p_star": self.p_star.to_dict(),
        }


def finalize(
    shared: SharedWeights,
    p_star: PolicyDistribution,
    spec: ForecasterSpec,
    data: Dataset,
    cfg: TsaaConfig,
    trials: Sequence[Trial] = (),
    mode: str = "tsaa",
) -> TsaaResult:
    """Fine-tune the shared weights under p_star (a sub-policy drawn per batch) and score on test."""
    common = dict(
        p_star=p_star, baseline_val=shared.baseline_val, baseline_test=dict(shared.baseline_test),
        trials=list(trials), epochs_spent=budget_spent(trials), K=shared.K, R=shared.R, mode=mode,
    )
    if len(p_star) == 0 or shared.R < 1:
        return TsaaResult(
            final_val=shared.baseline_val,
            final_test_mse=shared.baseline_test["mse"],
            final_test_mae=shared.baseline_test["mae"],
            **common,
        )
    res = fine_tune(
        shared.omega_share, spec, data.train, data.val,
        augment=policy_augmenter(p_star, data.decomposition),
        epoch_budget=shared.R,
        aug_seed=_seed(cfg.seed, 3),
    )
    model = Forecaster.from_checkpoint(spec, res.best_checkpoint)
    test = model.evaluate_all(data.test)
    return TsaaResult(final_val=res.final_loss, final_test_mse=test["mse"], final_test_mae=test["mae"], **common)


def run_tsaa(
    spec: ForecasterSpec,
    data: Dataset,
    cfg: TsaaConfig,
    mode: str = "tsaa",
    shared: SharedWeights | None = None,
    on_trial: Callable[[Trial], None] | None = None,
    previous: Sequence[Trial] = (),
) -> TsaaResult:
    """Full pipeline; ``mode`` is one of tsaa, random-search, baseline-only."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; choose from {MODES}")
    shared = shared or step1_shared_weights(spec, data, cfg)
    if mode == "baseline-only" or shared.R < 1:
        return finalize(shared, PolicyDistribution([], cfg.n, cfg.epsilon), spec, data, cfg, mode=mode)
    trials = step2_search(shared, spec, data, cfg, "random" if mode == "random-search" else "tpe", on_trial, previous)
    p_star = select_policy(trials, shared.baseline_val, cfg.k, cfg.n, cfg.epsilon)
    return finalize(shared, p_star, spec, data, cfg, trials, mode)
