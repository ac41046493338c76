"""Runtime and training budgets, with a desk-scale factor.

Nominal budgets are day-scale: tabular competitions get 2 days split
evenly between the scaffold and the open-ended phase, vision/language
competitions get 4 days split 2+2. The scale factor shrinks every
time-like quantity uniformly so fixtures finish in seconds; manifests
record both the nominal and the scaled values.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Callable, Optional

DAY = 86400.0

# scaffold-phase training caps
MAX_EPOCHS = 30
MAX_TRAIN_TIME = 10 * 3600.0
BATCH_SIZE = 32
N_TRIALS = 20
K_FOLDS = 5
BLEND_AFTER = 3
TTA_ROUNDS = 4

DESK_SCALE = 1.0 / 1440.0  # day-scale budgets become minute-scale

LR_RANGE = (1e-6, 1e-2)
OPTIMIZERS = ("Adam", "SGD", "AdamW")


@dataclass(frozen=True)
class BudgetPolicy:
    scaffold_runtime: float
    open_ended_runtime: float
    scale: float = 1.0
    max_epochs: int = MAX_EPOCHS
    max_train_time: float = MAX_TRAIN_TIME
    batch_size: int = BATCH_SIZE
    n_trials: int = N_TRIALS
    k_folds: int = K_FOLDS
    blend_after: int = BLEND_AFTER
    tta_rounds: int = TTA_ROUNDS
    grace: float = 0.05

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale factor must be positive")
        if self.scaffold_runtime <= 0 or self.open_ended_runtime <= 0:
            raise ValueError("phase runtimes must be positive")

    @classmethod
    def for_competition(cls, competition_class: str, scale: float = 1.0) -> "BudgetPolicy":
        if competition_class == "tabular":
            return cls(scaffold_runtime=DAY, open_ended_runtime=DAY, scale=scale)
        if competition_class == "cv_nlp":
            return cls(scaffold_runtime=2 * DAY, open_ended_runtime=2 * DAY, scale=scale)
        raise ValueError(f"unknown competition class {competition_class!r}")

    @property
    def total_runtime(self) -> float:
        return self.scaffold_runtime + self.open_ended_runtime

    def scaled(self, seconds: float) -> float:
        return seconds * self.scale

    def to_plain(self) -> dict:
        return {
            "scaffold_runtime": self.scaffold_runtime,
            "open_ended_runtime": self.open_ended_runtime,
            "total_runtime": self.total_runtime,
            "scale": self.scale,
            "scaled_scaffold_runtime": self.scaled(self.scaffold_runtime),
            "scaled_open_ended_runtime": self.scaled(self.open_ended_runtime),
            "max_epochs": self.max_epochs,
            "max_train_time": self.max_train_time,
            "batch_size": self.batch_size,
            "n_trials": self.n_trials,
            "k_folds": self.k_folds,
            "blend_after": self.blend_after,
            "tta_rounds": self.tta_rounds,
        }


@dataclass(frozen=True)
class TrialRequest:
    epochs: int
    time_limit: float
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Decision:
    admitted: bool
    reason: str = ""


def random_search(rng: random.Random) -> dict:
    """Default hyperparameter proposer over (learning rate, optimiser)."""
    lo, hi = LR_RANGE
    lr = math.exp(rng.uniform(math.log(lo), math.log(hi)))
    return {"lr": lr, "optimizer": rng.choice(OPTIMIZERS)}


class TrainingBudget:
    """Admission control for scaffold-phase training.

    At most ``n_trials`` hyperparameter trials run, each capped at
    ``max_epochs`` and ``max_train_time`` (scaled); cross-validation then
    trains the best configuration exactly ``k_folds`` times. The search
    strategy is pluggable; random search is the default.
    """

    def __init__(self, policy: BudgetPolicy, seed: int = 0,
                 proposer: Optional[Callable[[random.Random], dict]] = None):
        self.policy = policy
        self.trials_admitted = 0
        self._rng = random.Random(seed)
        self._proposer = proposer or random_search

    def propose_trial(self) -> TrialRequest:
        return TrialRequest(
            epochs=self.policy.max_epochs,
            time_limit=self.policy.scaled(self.policy.max_train_time),
            params=self._proposer(self._rng),
        )

    def admit_trial(self, request: TrialRequest) -> Decision:
        if self.trials_admitted >= self.policy.n_trials:
            return Decision(False, f"trial budget exhausted ({self.policy.n_trials} trials)")
        if request.epochs > self.policy.max_epochs:
            return Decision(False, f"epochs {request.epochs} exceed cap {self.policy.max_epochs}")
        if request.time_limit > self.policy.scaled(self.policy.max_train_time) + 1e-9:
            return Decision(False, "trial time limit exceeds the training time cap")
        self.trials_admitted += 1
        return Decision(True, f"trial {self.trials_admitted}/{self.policy.n_trials}")

    def cross_validation_jobs(self, best_params: dict) -> list[TrialRequest]:
        """Exactly k_folds trainings of the winning configuration."""
        return [
            TrialRequest(epochs=self.policy.max_epochs,
                         time_limit=self.policy.scaled(self.policy.max_train_time),
                         params={**best_params, "fold": fold})
            for fold in range(self.policy.k_folds)
        ]
