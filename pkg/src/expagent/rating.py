"""Multiplayer contest rating over a rank history.

Each contest, every participant gets a performance estimate: the unique
root of a logistic rank-consistency equation against the whole field,
with a self-tie term that keeps the root finite even for the outright
winner and loser. Ratings then move toward the performance by an
uncertainty weight w = sigma^2 / (sigma^2 + beta^2), and sigma shrinks
with every contest. This is a conventional logistic variant of
multiplayer Elo, not a transcription of any particular published system;
its dynamics are locked by golden tests.

New participants enter at a 1500 rating. Tied participants receive
identical performance estimates (midrank treatment): the equation depends
only on the participant's rank outcome and the multiset of prior ratings.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

INITIAL_RATING = 1500.0
INITIAL_SIGMA = 350.0
PERFORMANCE_BETA = 200.0
_BISECTION_TOL = 1e-11  # tighter than the 1e-9 contract


@dataclass(frozen=True)
class RatingParams:
    initial_rating: float = INITIAL_RATING
    initial_sigma: float = INITIAL_SIGMA
    beta: float = PERFORMANCE_BETA
    scale: float = 400.0  # logistic scale of the rating axis


@dataclass(frozen=True)
class RatingEntry:
    mu: float
    sigma: float
    contests: int = 0


@dataclass(frozen=True)
class RatingState:
    entries: Mapping[str, RatingEntry] = field(default_factory=dict)

    def get(self, participant: str, params: RatingParams) -> RatingEntry:
        return self.entries.get(
            participant, RatingEntry(params.initial_rating, params.initial_sigma, 0))

    def rating(self, participant: str) -> Optional[float]:
        entry = self.entries.get(participant)
        return entry.mu if entry else None


@dataclass(frozen=True)
class ContestResult:
    """Ranked outcome of one contest: tie groups in rank order, best first."""

    competition_id: str
    ranking: tuple[tuple[str, ...], ...]
    timestamp: Optional[float] = None

    def __post_init__(self):
        participants = [p for group in self.ranking for p in group]
        if len(participants) != len(set(participants)):
            raise ValueError("each participant appears once in a contest")

    @property
    def participants(self) -> list[str]:
        return [p for group in self.ranking for p in group]

    def scores(self) -> dict[str, float]:
        """Total comparison score per participant: 1 per opponent beaten,
        0.5 per tie (midrank treatment)."""
        n = len(self.participants)
        out: dict[str, float] = {}
        above = 0
        for group in self.ranking:
            beaten = n - above - len(group)
            for participant in group:
                out[participant] = beaten + 0.5 * (len(group) - 1)
            above += len(group)
        return out

    def min_ranks(self) -> dict[str, int]:
        """Competition ranks with ties sharing the best position."""
        out: dict[str, int] = {}
        position = 1
        for group in self.ranking:
            for participant in group:
                out[participant] = position
            position += len(group)
        return out


def _logistic(x: float, scale: float) -> float:
    return 1.0 / (1.0 + 10.0 ** (-x / scale))


def solve_performance(score: float, field_mus: Sequence[float],
                      params: RatingParams) -> float:
    """Root of f(p) = score + 0.5 - sum_j F(p - mu_j), found by bisection.

    The sum runs over the whole field including the participant's own
    prior, and the +0.5 is the self-tie: f is strictly decreasing with
    f(-inf) > 0 > f(+inf), so the root exists and is finite for every
    rank, including a sweep of the field.
    """
    def f(p: float) -> float:
        return score + 0.5 - sum(_logistic(p - mu, params.scale) for mu in field_mus)

    margin = params.scale * math.log10(2.0 * len(field_mus)) + 2.0 * params.scale
    lo = min(field_mus) - margin
    hi = max(field_mus) + margin
    while f(lo) <= 0:
        lo -= params.scale
    while f(hi) >= 0:
        hi += params.scale
    while hi - lo > _BISECTION_TOL:
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def apply_contest(state: RatingState, result: ContestResult,
                  params: RatingParams = RatingParams()) -> RatingState:
    """Update every participant from one contest's ranks.

    Performances are solved against the prior ratings snapshot, so the
    result is invariant to participant list order; a single-participant
    contest carries no comparative information and is a no-op.
    """
    participants = result.participants
    if len(participants) <= 1:
        return state
    priors = {p: state.get(p, params) for p in participants}
    field_mus = [priors[p].mu for p in participants]
    scores = result.scores()
    performance_by_score: dict[float, float] = {}
    entries = dict(state.entries)
    for participant in participants:
        score = scores[participant]
        if score not in performance_by_score:
            performance_by_score[score] = solve_performance(score, field_mus, params)
        performance = performance_by_score[score]
        prior = priors[participant]
        variance = prior.sigma ** 2
        weight = variance / (variance + params.beta ** 2)
        mu = prior.mu + weight * (performance - prior.mu)
        sigma = math.sqrt(variance * params.beta ** 2 / (variance + params.beta ** 2))
        entries[participant] = RatingEntry(mu, sigma, prior.contests + 1)
    return RatingState(entries)


@dataclass
class RatingHistory:
    final: RatingState
    snapshots: list[tuple[str, RatingState]]  # (competition_id, state at close)

    def at_close(self, competition_id: str) -> Optional[RatingState]:
        for cid, snapshot in self.snapshots:
            if cid == competition_id:
                return snapshot
        return None


def rate_history(contests: Sequence[ContestResult],
                 params: RatingParams = RatingParams()) -> RatingHistory:
    """Fold apply_contest over a time-ordered contest list, keeping a
    snapshot of the ratings at each contest's close."""
    timestamps = [c.timestamp for c in contests if c.timestamp is not None]
    if timestamps and timestamps != sorted(timestamps):
        raise ValueError("contests must be time-ordered when timestamps are present")
    state = RatingState()
    snapshots = []
    for contest in contests:
        state = apply_contest(state, contest, params)
        snapshots.append((contest.competition_id, state))
    return RatingHistory(final=state, snapshots=snapshots)


def competition_difficulty(result: ContestResult, history: RatingHistory,
                           medals: Mapping[str, str]) -> Optional[float]:
    """Mean close-time rating of the bronze-or-better finishers.

    For contests that award no medals the caller passes inferred
    medal-level assignments instead; with no medalists at all the
    difficulty is undefined and reported as absent.
    """
    snapshot = history.at_close(result.competition_id)
    if snapshot is None:
        raise ValueError(f"no snapshot for contest {result.competition_id!r}")
    ratings = [snapshot.rating(p) for p, medal in medals.items()
               if medal in ("gold", "silver", "bronze") and snapshot.rating(p) is not None]
    if not ratings:
        return None
    return sum(ratings) / len(ratings)


def medal_assignments(result: ContestResult, rule=None) -> dict[str, str]:
    """Per-participant medal (or medal-level score) from private ranks."""
    from .leaderboard import DEFAULT_MEDAL_RULE, medal_for
    rule = rule or DEFAULT_MEDAL_RULE
    teams = len(result.participants)
    return {p: medal_for(rank, teams, rule) for p, rank in result.min_ranks().items()}


def load_contest_history(path: Path) -> list[ContestResult]:
    """Read contests from comma-separated text with columns
    competition_id, participant, rank, timestamp (rank 1 is best)."""
    rows = []
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append((row["competition_id"], row["participant"], int(row["rank"]),
                         float(row["timestamp"]) if row.get("timestamp") else None))
    by_contest: dict[str, list] = {}
    order: list[str] = []
    for cid, participant, rank, ts in rows:
        if cid not in by_contest:
            by_contest[cid] = []
            order.append(cid)
        by_contest[cid].append((rank, participant, ts))
    contests = []
    for cid in order:
        entries = sorted(by_contest[cid])
        groups: list[tuple[str, ...]] = []
        current_rank = None
        for rank, participant, _ in entries:
            if rank != current_rank:
                groups.append((participant,))
                current_rank = rank
            else:
                groups[-1] = groups[-1] + (participant,)
        timestamp = next((ts for _, _, ts in entries if ts is not None), None)
        contests.append(ContestResult(cid, tuple(groups), timestamp))
    return contests
