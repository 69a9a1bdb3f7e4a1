"""Asynchronous successive halving: rung schedule, promote/prune decisions, epoch accounting."""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

from .augment import SubPolicy


class ASHAError(ValueError):
    pass


@dataclass(frozen=True)
class RungSchedule:
    r: int
    R: int
    eta: int
    rung_epochs: tuple[int, ...]


def make_schedule(r: int, R: int, eta: int) -> RungSchedule:
    """Rungs at r * eta**j for j = 1..floor(log_eta(R / r)), keeping only those below R."""
    if r < 1:
        raise ASHAError(f"minimum resource must be >= 1, got {r}")
    if R < r:
        raise ASHAError(f"maximum resource R={R} is below minimum resource r={r}")
    if eta < 2:
        raise ASHAError(f"reduction factor must be >= 2, got {eta}")
    rungs = []
    epoch = r * eta
    while epoch <= R:
        # a checkpoint at R itself would decide nothing
        if epoch < R:
            rungs.append(epoch)
        epoch *= eta
    return RungSchedule(r, R, eta, tuple(rungs))


class Decision(str, Enum):
    PROMOTE = "promote"
    PRUNE = "prune"


class RungTable:
    """Shared per-rung report ledger; ``decide`` is atomic."""

    def __init__(self, eta: int):
        self.eta = eta
        self.records: dict[int, list[tuple[int, float]]] = {}
        self._lock = threading.Lock()

    def decide(self, rung: int, trial_id: int, loss: float) -> Decision:
        if not math.isfinite(loss):
            raise ASHAError(f"trial {trial_id} reported a non-finite loss at rung {rung}")
        with self._lock:
            reports = self.records.setdefault(rung, [])
            if any(t == trial_id for t, _ in reports):
                raise ASHAError(f"trial {trial_id} already reported at rung {rung}")
            reports.append((trial_id, float(loss)))
            ranked = sorted(reports, key=lambda rec: (rec[1], rec[0]))
            position = next(i for i, rec in enumerate(ranked) if rec[0] == trial_id)
            keep = len(reports) // self.eta
            # before eta reports exist, only a new best may continue
            promote = position < keep if keep >= 1 else position == 0
        return Decision.PROMOTE if promote else Decision.PRUNE


class TrialStatus(str, Enum):
    RUNNING = "running"
    PRUNED = "pruned"
    COMPLETED = "completed"
    FAILED = "failed"


@dataclass
class Trial:
    trial_id: int
    subpolicy: SubPolicy
    params: dict = field(default_factory=dict)
    source: str = "random"
    status: TrialStatus = TrialStatus.RUNNING
    rung_losses: dict[int, float] = field(default_factory=dict)
    val_losses: list[float] = field(default_factory=list)
    final_loss: float | None = None
    epochs_spent: int = 0
    pruned_at: int | None = None

    def to_dict(self) -> dict:
        final = self.final_loss if self.final_loss is None or math.isfinite(self.final_loss) else None
        return {
            "trial_id": self.trial_id,
            "source": self.source,
            "status": self.status.value,
            "subpolicy": self.subpolicy.to_dict(),
            "params": self.params,
            "rung_losses": {str(k): v for k, v in self.rung_losses.items()},
            "val_losses": self.val_losses,
            "final_loss": final,
            "epochs_spent": self.epochs_spent,
            "pruned_at": self.pruned_at,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trial":
        status = TrialStatus(d["status"])
        final = d.get("final_loss")
        if final is None and status is TrialStatus.FAILED:
            final = math.inf
        return cls(
            trial_id=int(d["trial_id"]),
            subpolicy=SubPolicy(tuple(d["subpolicy"]["ops"])),
            params=d.get("params", {}),
            source=d.get("source", "random"),
            status=status,
            rung_losses={int(k): float(v) for k, v in d.get("rung_losses", {}).items()},
            val_losses=list(d.get("val_losses", [])),
            final_loss=final,
            epochs_spent=int(d.get("epochs_spent", 0)),
            pruned_at=d.get("pruned_at"),
        )


def budget_spent(trials: Iterable[Trial]) -> int:
    return sum(t.epochs_spent for t in trials)


def budget_bound(beta: float, K: int, T_max: int) -> int:
    """Worst-case search epochs: every trial fine-tunes the full K - floor(beta*K)."""
    return (K - math.floor(beta * K)) * T_max
