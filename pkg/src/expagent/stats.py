"""Nonparametric comparison battery and the special functions behind it.

The p-value machinery is self-contained: a continued-fraction regularized
incomplete beta (Student-t tails), series/continued-fraction incomplete
gamma (chi-square tails), and the complementary error function from the
standard library (normal tails). Evaluation tolerance for the special
functions is 1e-10, well inside the 1e-6 oracle agreement contract.

Conventions:
  * Welch's t-test: two-sided, Welch-Satterthwaite degrees of freedom.
  * Wilcoxon signed-rank: zero differences dropped, statistic is
    min(T+, T-); exact distribution for n <= 25 without ties, otherwise
    the normal approximation with continuity and tie corrections.
  * Friedman: midrank ties with the standard tie correction; the fully
    degenerate case (every task an all-way tie) reports (0, 1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

_EPS = 1e-14
_TOL = 1e-10


# ---------------------------------------------------------------------------
# Special functions

def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < 1e-300:
        d = 1e-300
    d = 1.0 / d
    h = d
    for m in range(1, 400):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < 1e-300:
            d = 1e-300
        c = 1.0 + aa / c
        if abs(c) < 1e-300:
            c = 1e-300
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < 1e-300:
            d = 1e-300
        c = 1.0 + aa / c
        if abs(c) < 1e-300:
            c = 1e-300
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _TOL:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log(1.0 - x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf(t: float, dof: float) -> float:
    """P(T > t) for Student's t with ``dof`` degrees of freedom."""
    x = dof / (dof + t * t)
    tail = 0.5 * regularized_incomplete_beta(dof / 2.0, 0.5, x)
    return tail if t >= 0 else 1.0 - tail


def _lower_gamma_series(s: float, x: float) -> float:
    term = 1.0 / s
    total = term
    for k in range(1, 1000):
        term *= x / (s + k)
        total += term
        if abs(term) < abs(total) * _TOL:
            break
    return total * math.exp(-x + s * math.log(x) - math.lgamma(s))


def _upper_gamma_cf(s: float, x: float) -> float:
    b = x + 1.0 - s
    c = 1e300
    d = 1.0 / b
    h = d
    for i in range(1, 1000):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        if abs(d) < 1e-300:
            d = 1e-300
        c = b + an / c
        if abs(c) < 1e-300:
            c = 1e-300
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _TOL:
            break
    return h * math.exp(-x + s * math.log(x) - math.lgamma(s))


def chi2_sf(x: float, dof: float) -> float:
    """Upper tail of the chi-square distribution."""
    if x <= 0:
        return 1.0
    s = dof / 2.0
    half = x / 2.0
    if half < s + 1.0:
        return 1.0 - _lower_gamma_series(s, half)
    return _upper_gamma_cf(s, half)


def normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


# ---------------------------------------------------------------------------
# Rank utilities

def midranks(values: Sequence[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        average = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = average
        i = j + 1
    return ranks


# ---------------------------------------------------------------------------
# Tests

def welch_t_test(group_a: Sequence[float], group_b: Sequence[float]
                 ) -> tuple[float, float, float]:
    """Welch's unequal-variance t-test, two-sided.

    Returns (t, degrees_of_freedom, p). Groups of fewer than two values, or
    a pair with zero variance on both sides, are degenerate and rejected.
    """
    na, nb = len(group_a), len(group_b)
    if na < 2 or nb < 2:
        raise ValueError("each group needs at least two values")
    mean_a = sum(group_a) / na
    mean_b = sum(group_b) / nb
    var_a = sum((v - mean_a) ** 2 for v in group_a) / (na - 1)
    var_b = sum((v - mean_b) ** 2 for v in group_b) / (nb - 1)
    if var_a <= 0.0 and var_b <= 0.0:
        raise ValueError("degenerate groups: zero variance on both sides")
    se2 = var_a / na + var_b / nb
    t = (mean_a - mean_b) / math.sqrt(se2)
    dof = se2 ** 2 / ((var_a / na) ** 2 / (na - 1) + (var_b / nb) ** 2 / (nb - 1))
    p = 2.0 * student_t_sf(abs(t), dof)
    return t, dof, min(p, 1.0)


def _exact_signed_rank_cdf(n: int) -> list[float]:
    """CDF of the tie-free signed-rank statistic: subset sums of 1..n."""
    max_sum = n * (n + 1) // 2
    counts = [0] * (max_sum + 1)
    counts[0] = 1
    for r in range(1, n + 1):
        for w in range(max_sum, r - 1, -1):
            counts[w] += counts[w - r]
    total = float(2 ** n)
    cdf = []
    running = 0
    for w in range(max_sum + 1):
        running += counts[w]
        cdf.append(running / total)
    return cdf


def wilcoxon_signed_rank(group_a: Sequence[float], group_b: Sequence[float]
                         ) -> tuple[float, float, str]:
    """Paired Wilcoxon signed-rank test, two-sided.

    Returns (statistic, p, method) with method "exact" or "approx".
    """
    diffs = [a - b for a, b in zip(group_a, group_b) if a != b]
    if not diffs:
        raise ValueError("all differences are zero; the test is undefined")
    n = len(diffs)
    abs_diffs = [abs(d) for d in diffs]
    ranks = midranks(abs_diffs)
    t_plus = sum(r for d, r in zip(diffs, ranks) if d > 0)
    t_minus = sum(r for d, r in zip(diffs, ranks) if d < 0)
    statistic = min(t_plus, t_minus)
    has_ties = len(set(abs_diffs)) != n
    if n <= 25 and not has_ties:
        cdf = _exact_signed_rank_cdf(n)
        w = int(round(t_plus))
        lower = cdf[w]
        upper = 1.0 - (cdf[w - 1] if w > 0 else 0.0)  # inclusive upper tail
        return statistic, min(1.0, 2.0 * min(lower, upper)), "exact"
    mean = n * (n + 1) / 4.0
    variance = n * (n + 1) * (2 * n + 1) / 24.0
    tie_sizes: dict[float, int] = {}
    for d in abs_diffs:
        tie_sizes[d] = tie_sizes.get(d, 0) + 1
    variance -= sum(t ** 3 - t for t in tie_sizes.values()) / 48.0
    se = math.sqrt(variance)
    z = (t_plus - mean) / se
    z -= math.copysign(0.5, z) / se  # continuity correction
    p = 2.0 * normal_sf(abs(z))
    return statistic, min(p, 1.0), "approx"


def friedman_test(matrix: Sequence[Sequence[float]]) -> tuple[float, float]:
    """Friedman test over a methods x tasks matrix of measurements.

    Ranks are assigned within each task across methods, with midrank ties
    and the standard tie correction. Needs >= 3 methods and >= 2 tasks.
    """
    k = len(matrix)
    if k < 3:
        raise ValueError("Friedman needs at least three methods")
    n = len(matrix[0])
    if n < 2 or any(len(row) != n for row in matrix):
        raise ValueError("Friedman needs a full matrix with at least two tasks")
    rank_sums = [0.0] * k
    correction = 0.0
    for task in range(n):
        column = [matrix[method][task] for method in range(k)]
        ranks = midranks(column)
        for method in range(k):
            rank_sums[method] += ranks[method]
        sizes: dict[float, int] = {}
        for value in column:
            sizes[value] = sizes.get(value, 0) + 1
        correction += sum(t ** 3 - t for t in sizes.values())
    c = 1.0 - correction / (n * k * (k * k - 1))
    if c <= 0.0:
        return 0.0, 1.0  # every task an all-way tie
    ssbn = sum(r * r for r in rank_sums)
    statistic = (12.0 * ssbn / (n * k * (k + 1)) - 3.0 * n * (k + 1)) / c
    return statistic, chi2_sf(statistic, k - 1)


# ---------------------------------------------------------------------------
# Method comparison and CD groups

@dataclass(frozen=True)
class RankMatrix:
    """Performance quantiles per method and task (higher is better)."""

    methods: tuple[str, ...]
    tasks: tuple[str, ...]
    values: tuple[tuple[float, ...], ...]  # methods x tasks

    def __post_init__(self):
        if len(self.values) != len(self.methods):
            raise ValueError("one row of values per method")
        if any(len(row) != len(self.tasks) for row in self.values):
            raise ValueError("one value per task in every row")

    def average_ranks(self) -> dict[str, float]:
        """Mean midrank per method across tasks, rank 1 being the best."""
        totals = {m: 0.0 for m in self.methods}
        k = len(self.methods)
        for task in range(len(self.tasks)):
            column = [self.values[i][task] for i in range(k)]
            ranks = midranks([-v for v in column])  # highest quantile ranks first
            for i, method in enumerate(self.methods):
                totals[method] += ranks[i]
        return {m: totals[m] / len(self.tasks) for m in self.methods}


@dataclass
class ComparisonReport:
    friedman_statistic: float
    friedman_p: float
    alpha: float
    post_hoc_performed: bool
    average_ranks: dict[str, float]
    pairwise_p: dict[tuple[str, str], float] = field(default_factory=dict)
    groups: list[tuple[str, ...]] = field(default_factory=list)

    def to_plain(self) -> dict:
        return {
            "friedman_statistic": self.friedman_statistic,
            "friedman_p": self.friedman_p,
            "alpha": self.alpha,
            "post_hoc_performed": self.post_hoc_performed,
            "average_ranks": self.average_ranks,
            "pairwise_p": {f"{a}|{b}": p for (a, b), p in self.pairwise_p.items()},
            "groups": [list(g) for g in self.groups],
        }


def compare_methods(matrix: RankMatrix, alpha: float = 0.05) -> ComparisonReport:
    """Friedman gate, then pairwise Wilcoxon post-hocs and CD groups.

    Groups are maximal rank-contiguous sets whose members are pairwise not
    significantly different at ``alpha``. When the Friedman test is not
    significant no post-hoc runs and all methods share one group.
    """
    statistic, p = friedman_test(matrix.values)
    ranks = matrix.average_ranks()
    if p >= alpha:
        return ComparisonReport(statistic, p, alpha, False, ranks,
                                groups=[tuple(sorted(ranks, key=ranks.get))])
    pairwise: dict[tuple[str, str], float] = {}
    for i, a in enumerate(matrix.methods):
        for b in matrix.methods[i + 1:]:
            _, pw, _ = wilcoxon_signed_rank(matrix.values[matrix.methods.index(a)],
                                            matrix.values[matrix.methods.index(b)])
            pairwise[(a, b)] = pw

    def not_different(a: str, b: str) -> bool:
        return pairwise.get((a, b), pairwise.get((b, a), 1.0)) >= alpha

    ordered = sorted(ranks, key=ranks.get)
    groups: list[tuple[str, ...]] = []
    for start in range(len(ordered)):
        end = start
        while end + 1 < len(ordered) and all(
                not_different(ordered[i], ordered[end + 1])
                for i in range(start, end + 1)):
            end += 1
        group = tuple(ordered[start:end + 1])
        if not any(set(group) <= set(existing) for existing in groups):
            groups.append(group)
    return ComparisonReport(statistic, p, alpha, True, ranks, pairwise, groups)


def render_cd_diagram(report: ComparisonReport) -> str:
    """Plain-text critical-difference view: a bar joins methods that are
    not statistically different."""
    ordered = sorted(report.average_ranks, key=report.average_ranks.get)
    width = max(len(m) for m in ordered) if ordered else 0
    lines = [
        f"Friedman chi2={report.friedman_statistic:.4f} p={report.friedman_p:.4g} "
        f"(alpha={report.alpha}, post-hoc {'performed' if report.post_hoc_performed else 'not performed'})",
        "average rank (1 = best); '=' bars join methods not statistically different",
    ]
    for method in ordered:
        bars = "".join(
            " =" if method in group else "  " for group in report.groups)
        lines.append(f"  {report.average_ranks[method]:5.2f}  {method:<{width}} {bars}")
    return "\n".join(lines) + "\n"
