"""Aligned-ranks Friedman test, Shaffer post-hoc and derived summaries.

Average ranks follow the critical-difference convention: rank 1 is the best
(highest balanced accuracy) cell of the jointly ranked, row-aligned table.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb
from pathlib import Path

import numpy as np
from scipy import stats

from ..errors import InvalidArgumentError


@dataclass(frozen=True, eq=False)
class ResultsTable:
    values: np.ndarray
    methods: tuple

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        methods = tuple(str(m) for m in self.methods)
        if vals.ndim != 2 or vals.shape[1] != len(methods):
            raise InvalidArgumentError(f"table shape {vals.shape} does not match {len(methods)} methods")
        finite = vals[np.isfinite(vals)]
        if np.any((finite < 0) | (finite > 1)):
            raise InvalidArgumentError("table entries must lie in [0, 1]")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "methods", methods)

    @property
    def shape(self):
        return self.values.shape

    def complete_rows(self) -> "ResultsTable":
        keep = np.all(np.isfinite(self.values), axis=1)
        return ResultsTable(self.values[keep], self.methods)

    @staticmethod
    def concat(tables) -> "ResultsTable":
        tables = list(tables)
        methods = tables[0].methods
        for t in tables[1:]:
            if t.methods != methods:
                raise InvalidArgumentError("tables have different method columns")
        return ResultsTable(np.vstack([t.values for t in tables]), methods)


@dataclass(frozen=True, eq=False)
class RankSummary:
    methods: tuple
    avg_rank: np.ndarray
    statistic: float
    p_value: float
    p_adjusted: np.ndarray
    alpha: float = 0.05
    n_rows: int = 0
    groups: tuple = field(default=())

    def rank_of(self, method: str) -> float:
        return float(self.avg_rank[self.methods.index(method)])

    def best(self) -> str:
        return self.methods[int(np.argmin(self.avg_rank))]


def _matrix(table):
    if isinstance(table, ResultsTable):
        return table.values
    return np.asarray(table, dtype=float)


def align_rows(values: np.ndarray) -> np.ndarray:
    """Subtract each row's mean; constant rows become exactly zero."""
    aligned = values - values.mean(axis=1, keepdims=True)
    aligned[values.max(axis=1) == values.min(axis=1)] = 0.0
    return aligned


def aligned_ranks(values: np.ndarray) -> np.ndarray:
    """Joint mid-ranks of the row-aligned table, 1 = largest value."""
    # rounding turns float noise from the row means into the exact ties the
    # values have in exact arithmetic (accuracies are small fractions)
    aligned = np.round(align_rows(values), 12)
    return stats.rankdata(-aligned.ravel(), method="average").reshape(values.shape)


def friedman_aligned_ranks(table):
    """Friedman aligned-ranks test.

    Returns
    -------
    statistic : float
        Hodges-Lehmann aligned-ranks statistic, chi-square with ``k - 1``
        degrees of freedom under the null.
    p_value : float
    avg_ranks : ndarray, shape (k,)
        Mean aligned rank per column (1 = best).
    """
    X = _matrix(table)
    if X.ndim != 2:
        raise InvalidArgumentError("expected an (n_rows, k_methods) table")
    n, k = X.shape
    if n < 2 or k < 2:
        raise InvalidArgumentError(f"need n >= 2 rows and k >= 2 columns, got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidArgumentError("table contains non-finite entries")
    R = aligned_ranks(X)
    avg = R.mean(axis=0)
    aligned = align_rows(X)
    if np.all(aligned == aligned.flat[0]):
        return 0.0, 1.0, avg
    N = n * k
    col = R.sum(axis=0)
    row = R.sum(axis=1)
    num = (k - 1) * (np.sum(col**2) - (k * n**2 / 4.0) * (N + 1) ** 2)
    den = N * (N + 1) * (2 * N + 1) / 6.0 - np.sum(row**2) / k
    if den <= 0:
        return 0.0, 1.0, avg
    stat = max(float(num / den), 0.0)
    return stat, float(stats.chi2.sf(stat, k - 1)), avg


@lru_cache(maxsize=None)
def _shaffer_set(k: int) -> frozenset:
    """Possible numbers of simultaneously true pairwise hypotheses among k."""
    if k <= 1:
        return frozenset({0})
    out = set()
    for j in range(1, k + 1):
        out.update(comb(j, 2) + s for s in _shaffer_set(k - j))
    return frozenset(out)


def shaffer_multipliers(k: int) -> list[int]:
    """Shaffer's static step-down multipliers ``t_1 >= t_2 >= ... >= t_m``."""
    m = k * (k - 1) // 2
    S = sorted(_shaffer_set(k))
    return [max(a for a in S if a <= m - i) for i in range(m)]


def shaffer_adjust(p_values) -> np.ndarray:
    """Shaffer-adjust the ``k(k-1)/2`` pairwise p-values of a k-group comparison.

    ``p_values`` must be ordered as ``itertools.combinations(range(k), 2)``.
    """
    p = np.asarray(p_values, dtype=float)
    m = len(p)
    k = int(round((1 + np.sqrt(1 + 8 * m)) / 2))
    if k * (k - 1) // 2 != m:
        raise InvalidArgumentError(f"{m} p-values do not correspond to all pairs of k groups")
    order = np.argsort(p, kind="stable")
    t = np.asarray(shaffer_multipliers(k), dtype=float)
    adj_sorted = np.minimum(np.maximum.accumulate(t * p[order]), 1.0)
    adj = np.empty(m)
    adj[order] = adj_sorted
    return adj


def pairwise_z(avg_ranks, n: int) -> np.ndarray:
    """Pairwise z statistics of aligned average ranks (normal approximation)."""
    r = np.asarray(avg_ranks, dtype=float)
    k = len(r)
    se = np.sqrt(k * (n * k + 1) / 6.0 / n)
    return np.array([(r[i] - r[j]) / se for i, j in itertools.combinations(range(k), 2)])


def shaffer_posthoc(avg_aligned_ranks, n: int, k: int | None = None) -> np.ndarray:
    """Symmetric ``k x k`` matrix of Shaffer-adjusted pairwise p-values.

    The diagonal is set to 1.
    """
    r = np.asarray(avg_aligned_ranks, dtype=float)
    k = len(r) if k is None else int(k)
    if k < 2 or len(r) != k:
        raise InvalidArgumentError(f"need k >= 2 average ranks, got {len(r)} (k={k})")
    if n < 1:
        raise InvalidArgumentError(f"n must be >= 1, got {n}")
    raw = 2.0 * stats.norm.sf(np.abs(pairwise_z(r, n)))
    adj = shaffer_adjust(raw)
    P = np.ones((k, k))
    for (i, j), v in zip(itertools.combinations(range(k), 2), adj):
        P[i, j] = P[j, i] = v
    return P


def bonferroni_posthoc(avg_aligned_ranks, n: int) -> np.ndarray:
    r = np.asarray(avg_aligned_ranks, dtype=float)
    k = len(r)
    m = k * (k - 1) // 2
    raw = 2.0 * stats.norm.sf(np.abs(pairwise_z(r, n)))
    P = np.ones((k, k))
    for (i, j), v in zip(itertools.combinations(range(k), 2), np.minimum(raw * m, 1.0)):
        P[i, j] = P[j, i] = v
    return P


def nonsignificant_groups(methods, avg_rank, p_adjusted, alpha: float) -> tuple:
    """Maximal runs of rank-adjacent methods with no significant pair.

    These are the bars of a critical-difference diagram.
    """
    order = np.argsort(avg_rank, kind="stable")
    k = len(order)
    groups = []
    last_end = -1
    for a in range(k):
        b = a
        while b + 1 < k and all(p_adjusted[order[b + 1], order[c]] >= alpha for c in range(a, b + 1)):
            b += 1
        if b > last_end:
            groups.append(tuple(methods[order[c]] for c in range(a, b + 1)))
            last_end = b
    return tuple(groups)


def rank_summary(table: ResultsTable, alpha: float = 0.05) -> RankSummary:
    """Aligned Friedman test plus Shaffer post-hoc for a results table."""
    table = table.complete_rows()
    n, k = table.shape
    stat, p, avg = friedman_aligned_ranks(table)
    P = shaffer_posthoc(avg, n, k)
    return RankSummary(
        methods=table.methods,
        avg_rank=avg,
        statistic=stat,
        p_value=p,
        p_adjusted=P,
        alpha=alpha,
        n_rows=n,
        groups=nonsignificant_groups(table.methods, avg, P, alpha),
    )


def significance_frequency_table(per_subject_summaries, alpha: float = 0.05) -> np.ndarray:
    """Count, per ordered pair ``(i, j)``, the subjects where j beat i significantly.

    Column sums give how often each method was significantly better than
    another; row sums how often it was significantly worse.
    """
    summaries = list(per_subject_summaries)
    if not summaries:
        raise InvalidArgumentError("no summaries given")
    methods = summaries[0].methods
    k = len(methods)
    F = np.zeros((k, k), dtype=np.int64)
    for s in summaries:
        if s.methods != methods:
            raise InvalidArgumentError("summaries have different method sets")
        better = s.avg_rank[None, :] < s.avg_rank[:, None]
        F += ((s.p_adjusted < alpha) & better).astype(np.int64)
    np.fill_diagonal(F, 0)
    return F


def write_rank_summary(summary: RankSummary, out_dir) -> None:
    """Write ``ranks.csv``, ``pairwise_p.csv`` and ``groups.txt``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ranks.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "avg_rank"])
        for m, r in zip(summary.methods, summary.avg_rank):
            w.writerow([m, repr(float(r))])
        w.writerow(["#statistic", repr(summary.statistic)])
        w.writerow(["#p_value", repr(summary.p_value)])
        w.writerow(["#n_rows", summary.n_rows])
    with open(out / "pairwise_p.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", *summary.methods])
        for m, row in zip(summary.methods, summary.p_adjusted):
            w.writerow([m, *(repr(float(v)) for v in row)])
    with open(out / "groups.txt", "w") as fh:
        fh.write(f"# alpha = {summary.alpha}\n")
        for g in summary.groups:
            fh.write(" ".join(g) + "\n")
