import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from oracles import FRIEDMAN_FIXTURE, manual_aligned_friedman
from xdecode.errors import InvalidArgumentError
from xdecode.stats.ranks import (
    ResultsTable,
    bonferroni_posthoc,
    friedman_aligned_ranks,
    nonsignificant_groups,
    rank_summary,
    shaffer_adjust,
    shaffer_multipliers,
    shaffer_posthoc,
    significance_frequency_table,
    write_rank_summary,
)

def test_fixture_matches_manual_reference():
    stat, p, avg = friedman_aligned_ranks(FRIEDMAN_FIXTURE)
    ref_stat, ref_p, ref_avg = manual_aligned_friedman(FRIEDMAN_FIXTURE.tolist())
    assert stat == pytest.approx(ref_stat, abs=1e-6)
    assert p == pytest.approx(ref_p, abs=1e-6)
    np.testing.assert_allclose(avg, ref_avg, atol=1e-6)
    assert np.argmin(avg) == 2  # third column wins every row but one


def test_identical_columns_give_p_one():
    X = np.repeat(np.linspace(0.5, 0.9, 8)[:, None], 3, axis=1)
    stat, p, avg = friedman_aligned_ranks(X)
    assert p == 1.0 and stat == 0.0
    np.testing.assert_allclose(avg, avg[0])


def test_dominating_column_is_significant():
    rng = np.random.default_rng(0)
    A = rng.uniform(0.3, 0.6, 20)
    B = A + rng.normal(0, 0.02, 20)
    C = np.minimum(A + 0.3, 1.0)
    stat, p, avg = friedman_aligned_ranks(np.column_stack([A, B, C]) / 1.0)
    assert p < 0.001
    assert np.argmin(avg) == 2


def test_row_shift_invariance():
    rng = np.random.default_rng(1)
    X = rng.uniform(0.2, 0.7, (12, 4))
    shifted = X + rng.uniform(0, 0.3, (12, 1))
    a, b = friedman_aligned_ranks(X), friedman_aligned_ranks(shifted)
    assert a[0] == pytest.approx(b[0], abs=1e-9)
    np.testing.assert_allclose(a[2], b[2])


def test_average_ranks_sum_to_mean_rank():
    rng = np.random.default_rng(2)
    X = rng.uniform(0, 1, (7, 5))
    avg = friedman_aligned_ranks(X)[2]
    assert avg.sum() == pytest.approx(5 * (35 + 1) / 2)


def test_null_rejection_rate_is_calibrated():
    rng = np.random.default_rng(3)
    rej = 0
    for _ in range(300):
        X = rng.uniform(0.3, 0.9, (20, 4)) + rng.normal(0, 0.05, (20, 1))
        rej += friedman_aligned_ranks(X)[1] < 0.05
    assert 0.02 <= rej / 300 <= 0.08


def test_shaffer_multipliers_known_values():
    assert shaffer_multipliers(3) == [3, 1, 1]
    assert shaffer_multipliers(4) == [6, 3, 3, 3, 2, 1]
    assert shaffer_multipliers(5) == [10, 6, 6, 6, 6, 4, 4, 3, 2, 1]


def test_shaffer_adjust_hand_example():
    p = np.array([0.01, 0.04, 0.02, 0.5, 0.001, 0.03])
    adj = shaffer_adjust(p)
    order = np.argsort(p)
    steps = np.maximum.accumulate(np.array([6, 3, 3, 3, 2, 1]) * p[order])
    ref = np.empty(6)
    ref[order] = np.minimum(steps, 1)
    np.testing.assert_allclose(adj, ref)
    with pytest.raises(InvalidArgumentError):
        shaffer_adjust(np.ones(4))


@given(st.integers(3, 6), st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_shaffer_never_exceeds_bonferroni(k, seed):
    rng = np.random.default_rng(seed)
    m = k * (k - 1) // 2
    p = rng.uniform(0, 1, m) ** 3
    adj = shaffer_adjust(p)
    assert np.all(adj <= np.minimum(p * m, 1) + 1e-15)
    assert np.all(adj >= p - 1e-15)


def test_posthoc_matrices_consistent():
    avg = np.array([1.8, 2.1, 3.5, 2.6])
    S = shaffer_posthoc(avg, 30)
    B = bonferroni_posthoc(avg, 30)
    assert np.all(np.diag(S) == 1) and np.allclose(S, S.T)
    assert np.all(S <= B + 1e-15)
    se = np.sqrt(4 * (30 * 4 + 1) / 6 / 30)
    raw = 2 * stats.norm.sf(abs(avg[0] - avg[2]) / se)
    assert B[0, 2] == pytest.approx(min(6 * raw, 1))


def test_groups_are_runs_of_nonsignificant_neighbours():
    methods = ("a", "b", "c", "d")
    avg = np.array([1.0, 1.5, 3.0, 3.4])
    P = np.ones((4, 4))
    for i, j in itertools.product((0, 1), (2, 3)):
        P[i, j] = P[j, i] = 0.001
    assert nonsignificant_groups(methods, avg, P, 0.05) == (("a", "b"), ("c", "d"))
    assert nonsignificant_groups(methods, avg, np.ones((4, 4)), 0.05) == (methods,)


def test_rank_summary_and_outputs(tmp_path):
    table = ResultsTable(np.vstack([FRIEDMAN_FIXTURE, [np.nan, 0.5, 0.5]]), ("x", "y", "z"))
    s = rank_summary(table)
    assert s.n_rows == 10
    assert s.best() == "z"
    write_rank_summary(s, tmp_path)
    lines = (tmp_path / "ranks.csv").read_text().splitlines()
    assert lines[0] == "method,avg_rank"
    assert (tmp_path / "pairwise_p.csv").exists()
    assert (tmp_path / "groups.txt").read_text().startswith("# alpha")


def test_frequency_table_counts_significant_wins():
    s = rank_summary(ResultsTable(np.column_stack([FRIEDMAN_FIXTURE[:, 0], FRIEDMAN_FIXTURE[:, 0] * 0.5]), ("good", "bad")))
    F = significance_frequency_table([s, s, s])
    assert F.tolist() == [[0, 0], [3, 0]]


def test_results_table_validation():
    with pytest.raises(InvalidArgumentError):
        ResultsTable(np.array([[1.2, 0.3]]), ("a", "b"))
    with pytest.raises(InvalidArgumentError):
        ResultsTable(np.ones((2, 3)) * 0.5, ("a", "b"))
    with pytest.raises(InvalidArgumentError):
        friedman_aligned_ranks(np.ones((1, 3)) * 0.5)
