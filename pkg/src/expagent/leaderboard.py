"""Leaderboard evaluation: submission selection, quantiles, medals.

Selection is greedy on public scores: only the chosen submissions' private
scores are ever observed, mirroring how a competitor actually experiences
the board. The quantile convention is strict: ties with existing scores do
not count against the method, matching or beating the best score yields
100, and scoring worse than everyone yields 0.
"""
from __future__ import annotations

import csv
import math
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import ConfigurationError


@dataclass(frozen=True)
class LeaderboardSnapshot:
    scores: tuple[float, ...]
    direction: str  # maximize | minimize
    k_c: int = 2
    teams: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.scores) < 1:
            raise ValueError("a leaderboard needs at least one score")
        if self.k_c < 1:
            raise ValueError("k_c must be >= 1")
        if self.direction not in ("maximize", "minimize"):
            raise ValueError(f"unknown direction {self.direction!r}")

    @property
    def n(self) -> int:
        return len(self.scores)


@dataclass(frozen=True)
class SubmissionRecord:
    submission_id: str
    public_score: float
    private_score: float

    def __post_init__(self):
        if not (math.isfinite(self.public_score) and math.isfinite(self.private_score)):
            raise ValueError("submission scores must be finite")


def _better(direction: str):
    if direction == "minimize":
        return lambda a, b: a < b
    return lambda a, b: a > b


def greedy_select(records: Sequence, k_c: int, direction: str):
    """Pick the min(k_c, n) records with the best public scores; the final
    score is the best private score among those. Ties on public score break
    by submission_id. Unselected records' private scores are never read."""
    if not records:
        raise ValueError("greedy_select needs at least one record")
    sign = 1.0 if direction == "minimize" else -1.0
    ranked = sorted(records, key=lambda r: (sign * r.public_score, r.submission_id))
    selected = ranked[:min(k_c, len(ranked))]
    better = _better(direction)
    final = selected[0].private_score
    for record in selected[1:]:
        if better(record.private_score, final):
            final = record.private_score
    return selected, final


def quantile(final_private: float, board: LeaderboardSnapshot) -> float:
    """100 minus the percentage of board entries strictly better than the
    final private score."""
    better = _better(board.direction)
    strictly_better = sum(1 for s in board.scores if better(s, final_private))
    return 100.0 - 100.0 * strictly_better / board.n


def rank_for_score(final_private: float, board: LeaderboardSnapshot) -> int:
    """Dense rank of the score against the board: 1 plus the number of
    distinct strictly better scores (tied entries share the best rank)."""
    better = _better(board.direction)
    distinct_better = {s for s in board.scores if better(s, final_private)}
    return 1 + len(distinct_better)


@dataclass(frozen=True)
class MedalRule:
    """Rank-and-field-size thresholds of the platform progression table.

    Percentage thresholds admit ranks up to floor(threshold * teams); the
    extra-gold rule adds one gold slot per full 500 teams. All arithmetic
    is integer, so band boundaries are exact.
    """

    small_max: int = 99      # 0-99 teams: percentage bands
    mid_max: int = 249       # 100-249: gold absolute
    large_max: int = 999     # 250-999: all absolute + extra gold

    def gold_slots(self, teams: int) -> int:
        if teams <= self.small_max:
            return teams // 10                      # top 10%
        if teams <= self.mid_max:
            return 10                               # top 10
        return 10 + (teams * 2) // 1000             # top 10 + 0.2%

    def silver_slots(self, teams: int) -> int:
        if teams <= self.mid_max:
            return teams // 5                       # top 20%
        if teams <= self.large_max:
            return 50                               # top 50
        return teams // 20                          # top 5%

    def bronze_slots(self, teams: int) -> int:
        if teams <= self.mid_max:
            return (teams * 2) // 5                 # top 40%
        if teams <= self.large_max:
            return 100                              # top 100
        return teams // 10                          # top 10%


DEFAULT_MEDAL_RULE = MedalRule()


def medal_for(rank: int, teams: int, rule: MedalRule = DEFAULT_MEDAL_RULE) -> str:
    if not 1 <= rank <= teams:
        raise ValueError(f"rank {rank} out of range for {teams} teams")
    if rank <= rule.gold_slots(teams):
        return "gold"
    if rank <= rule.silver_slots(teams):
        return "silver"
    if rank <= rule.bronze_slots(teams):
        return "bronze"
    return "none"


def load_leaderboard(path: Path, direction: str, k_c: int = 2) -> LeaderboardSnapshot:
    """Read a board from comma-separated text with columns
    team, private_score[, public_score]."""
    scores, teams = [], []
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            teams.append(row["team"])
            scores.append(float(row["private_score"]))
    return LeaderboardSnapshot(tuple(scores), direction, k_c, tuple(teams))


class LeaderboardSource:
    """File-backed board access; the HTTP variant hides behind the same call."""

    def fetch(self, competition_id: str, direction: str, k_c: int = 2) -> LeaderboardSnapshot:
        raise NotImplementedError


class FileLeaderboardSource(LeaderboardSource):
    def __init__(self, root: Path):
        self.root = Path(root)

    def fetch(self, competition_id: str, direction: str, k_c: int = 2) -> LeaderboardSnapshot:
        return load_leaderboard(self.root / f"{competition_id}.csv", direction, k_c)


class HttpLeaderboardSource(LeaderboardSource):
    """Live fetching stub, disabled by default; acceptance runs use files."""

    def __init__(self, endpoint: str, enabled: bool = False):
        self.endpoint = endpoint
        self.enabled = enabled

    def fetch(self, competition_id: str, direction: str, k_c: int = 2) -> LeaderboardSnapshot:
        if not self.enabled:
            raise ConfigurationError("live leaderboard fetching is disabled")
        with urllib.request.urlopen(f"{self.endpoint}/{competition_id}") as response:
            text = response.read().decode("utf-8")
        rows = list(csv.DictReader(text.splitlines()))
        return LeaderboardSnapshot(
            tuple(float(r["private_score"]) for r in rows), direction, k_c,
            tuple(r["team"] for r in rows))


# ---------------------------------------------------------------------------
# Scoring metrics for offline submission evaluation against an answer key.

def _rmse(pred, true):
    return math.sqrt(sum((p - t) ** 2 for p, t in zip(pred, true)) / len(true))


def _mae(pred, true):
    return sum(abs(p - t) for p, t in zip(pred, true)) / len(true)


def _accuracy(pred, true):
    return sum(1 for p, t in zip(pred, true) if round(p) == round(t)) / len(true)


def _log_loss(pred, true, eps=1e-15):
    total = 0.0
    for p, t in zip(pred, true):
        p = min(max(p, eps), 1 - eps)
        total += -(t * math.log(p) + (1 - t) * math.log(1 - p))
    return total / len(true)


METRICS = {
    "rmse": (_rmse, "minimize"),
    "mae": (_mae, "minimize"),
    "accuracy": (_accuracy, "maximize"),
    "logloss": (_log_loss, "minimize"),
}


def metric_fn(name: str):
    try:
        return METRICS[name]
    except KeyError:
        raise ConfigurationError(f"unknown metric {name!r}; known: {sorted(METRICS)}") from None


def score_submission(submission_path: Path, answers_path: Path,
                     metric_name: str) -> tuple[float, float]:
    """Score one prediction file against the answer key.

    The key has columns id, target, usage (Public/Private); the returned
    pair is (public_score, private_score).
    """
    fn, _ = metric_fn(metric_name)
    answers: dict[str, tuple[float, str]] = {}
    with Path(answers_path).open("r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            answers[row["id"]] = (float(row["target"]), row["usage"])
    predictions: dict[str, float] = {}
    with Path(submission_path).open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        for row in reader:
            predictions[row[0]] = float(row[1])
    missing = sorted(set(answers) - set(predictions))
    if missing:
        raise ConfigurationError(
            f"submission {submission_path.name} missing {len(missing)} ids, e.g. {missing[:3]}")
    split: dict[str, tuple[list, list]] = {"Public": ([], []), "Private": ([], [])}
    for key, (target, usage) in answers.items():
        pred, true = split[usage]
        pred.append(predictions[key])
        true.append(target)
    return (fn(*split["Public"]), fn(*split["Private"]))
