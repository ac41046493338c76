"""Prediction blending: uniform mean, fitted simplex weights, small net.

``weighted_fit`` is the default: coordinate descent over the simplex,
started at the best single candidate, accepting only improving moves, so
the blend can never end up worse than the best candidate on the
validation metric. The small-network combiner is an optional backend; the
spec of "small" is one hidden layer trained by plain gradient descent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigurationError


def mean_squared_error(pred: Sequence[float], true: Sequence[float]) -> float:
    p, t = np.asarray(pred, dtype=float), np.asarray(true, dtype=float)
    return float(np.mean((p - t) ** 2))


@dataclass
class BlendConfig:
    method: str  # mean | weighted_fit | small_network
    candidates: Mapping[str, Mapping[str, float]]  # name -> {id: prediction}
    targets: Mapping[str, float]                   # id -> validation target
    metric: Callable[[Sequence[float], Sequence[float]], float] = mean_squared_error
    direction: str = "minimize"
    hidden_units: int = 8
    epochs: int = 400
    learning_rate: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("mean", "weighted_fit", "small_network"):
            raise ValueError(f"unknown blend method {self.method!r}")
        if len(self.candidates) < 2:
            raise ValueError("blending needs at least two candidates")
        if self.direction not in ("maximize", "minimize"):
            raise ValueError(f"unknown direction {self.direction!r}")


@dataclass
class BlendResult:
    predictions: dict[str, float]
    weights: dict[str, float]
    validation_score: float


def _aligned_matrix(config: BlendConfig) -> tuple[list[str], list[str], np.ndarray, np.ndarray]:
    names = sorted(config.candidates)
    id_sets = {name: set(config.candidates[name]) for name in names}
    reference = id_sets[names[0]]
    offending: set[str] = set()
    for name in names[1:]:
        offending |= id_sets[name] ^ reference
    if offending:
        raise ConfigurationError(
            f"candidate predictions misaligned on {len(offending)} ids: "
            f"{sorted(offending)[:5]}")
    ids = sorted(reference)
    matrix = np.array([[config.candidates[name][i] for i in ids] for name in names])
    target_ids = [i for i in ids if i in config.targets]
    if not target_ids:
        raise ConfigurationError("no validation targets overlap the candidate ids")
    targets = np.array([config.targets[i] for i in target_ids])
    return names, ids, matrix, targets


def _score(config: BlendConfig, combined: np.ndarray, ids: list[str],
           targets: np.ndarray) -> float:
    by_id = dict(zip(ids, combined))
    pred = [by_id[i] for i in ids if i in config.targets]
    return config.metric(pred, targets)


def _improves(direction: str, candidate: float, incumbent: float) -> bool:
    return candidate < incumbent if direction == "minimize" else candidate > incumbent


def blend(config: BlendConfig) -> BlendResult:
    names, ids, matrix, targets = _aligned_matrix(config)
    if config.method == "mean":
        weights = np.full(len(names), 1.0 / len(names))
    elif config.method == "weighted_fit":
        weights = _fit_simplex_weights(config, names, ids, matrix, targets)
    else:
        return _small_network(config, names, ids, matrix, targets)
    combined = weights @ matrix
    return BlendResult(
        predictions=dict(zip(ids, map(float, combined))),
        weights=dict(zip(names, map(float, weights))),
        validation_score=_score(config, combined, ids, targets),
    )


def _fit_simplex_weights(config: BlendConfig, names, ids, matrix, targets) -> np.ndarray:
    k = len(names)
    scores = [_score(config, matrix[i], ids, targets) for i in range(k)]
    best_vertex = min(range(k), key=lambda i: scores[i]) if config.direction == "minimize" \
        else max(range(k), key=lambda i: scores[i])
    weights = np.zeros(k)
    weights[best_vertex] = 1.0
    incumbent = scores[best_vertex]
    step = 0.5
    while step > 1e-4:
        moved = False
        for receiver in range(k):
            for donor in range(k):
                if donor == receiver or weights[donor] < 1e-12:
                    continue
                delta = min(step, weights[donor])
                trial = weights.copy()
                trial[donor] -= delta
                trial[receiver] += delta
                value = _score(config, trial @ matrix, ids, targets)
                if _improves(config.direction, value, incumbent):
                    weights, incumbent, moved = trial, value, True
        if not moved:
            step /= 2.0
    total = weights.sum()
    return weights / total if total else weights


def _small_network(config: BlendConfig, names, ids, matrix, targets) -> BlendResult:
    """One-hidden-layer combiner trained by full-batch gradient descent."""
    rng = np.random.default_rng(config.seed)
    target_mask = np.array([i in config.targets for i in ids])
    x = matrix.T  # rows are ids, columns are candidates
    x_train, y_train = x[target_mask], targets
    k, h = x.shape[1], config.hidden_units
    w1 = rng.normal(0, 0.5, (k, h))
    b1 = np.zeros(h)
    w2 = rng.normal(0, 0.5, h)
    b2 = float(np.mean(y_train))
    n = len(y_train)
    for _ in range(config.epochs):
        hidden = np.tanh(x_train @ w1 + b1)
        out = hidden @ w2 + b2
        grad_out = 2.0 * (out - y_train) / n
        grad_w2 = hidden.T @ grad_out
        grad_b2 = grad_out.sum()
        grad_hidden = np.outer(grad_out, w2) * (1 - hidden ** 2)
        grad_w1 = x_train.T @ grad_hidden
        grad_b1 = grad_hidden.sum(axis=0)
        w1 -= config.learning_rate * grad_w1
        b1 -= config.learning_rate * grad_b1
        w2 -= config.learning_rate * grad_w2
        b2 -= config.learning_rate * grad_b2
    combined = np.tanh(x @ w1 + b1) @ w2 + b2
    return BlendResult(
        predictions=dict(zip(ids, map(float, combined))),
        weights={name: math.nan for name in names},  # no linear weights to report
        validation_score=_score(config, combined, ids, targets),
    )
