import itertools

import numpy as np
import pytest
from scipy import stats

from xdecode.errors import InvalidArgumentError
from xdecode.stats.inference import (
    VarianceSmoother,
    per_subject_permutation_test,
    sign_flip_permutation_test,
    sign_flips,
    smoothed_one_sample_t,
)
from xdecode.stats.tfce import TfceConfig
from xdecode.volume import BrainMask, VoxelGrid

FAST = TfceConfig(n_steps=20)


def dense_smooth(values, mask, sigma):
    """Explicit kernel-matrix smoothing, renormalized over the mask."""
    X = mask.coords() * np.asarray(mask.grid.voxel_size_mm)
    r = [np.floor(3 * sigma / v + 1e-9) for v in mask.grid.voxel_size_mm]
    d = X[:, None, :] - X[None, :, :]
    within = np.all(np.abs(d) / np.asarray(mask.grid.voxel_size_mm) <= np.asarray(r) + 1e-9, axis=2)
    K = np.exp(-np.sum(d**2, axis=2) / (2 * sigma**2)) * within
    return K @ values / K.sum(axis=1)


def test_variance_smoothing_matches_dense_oracle():
    rng = np.random.default_rng(0)
    grid = VoxelGrid((4, 4, 4), (3.0, 2.0, 2.5))
    mask = BrainMask(grid, rng.random(grid.dims) < 0.8)
    maps = rng.standard_normal((3, mask.n_included))
    sm = VarianceSmoother(mask, 4.0)
    var = maps.var(axis=0, ddof=1)
    np.testing.assert_allclose(sm(var), dense_smooth(var, mask, 4.0), rtol=1e-12)
    t, flags = smoothed_one_sample_t(maps, mask, 4.0)
    expect = maps.mean(0) / np.sqrt(dense_smooth(var, mask, 4.0) / 3)
    np.testing.assert_allclose(t, expect, rtol=1e-10)
    assert not flags.any()


def test_zero_sigma_gives_classic_t():
    rng = np.random.default_rng(1)
    mask = BrainMask.full(VoxelGrid((3, 3, 2)))
    maps = rng.standard_normal((7, 18)) + 0.2
    t, _ = smoothed_one_sample_t(maps, mask, 0.0)
    np.testing.assert_allclose(t, stats.ttest_1samp(maps, 0.0).statistic, rtol=1e-10)


def test_zero_variance_voxels_are_flagged():
    mask = BrainMask.full(VoxelGrid((2, 1, 1)))
    maps = np.array([[0.3, 0.1], [0.3, -0.2], [0.3, 0.4]])
    t, flags = smoothed_one_sample_t(maps, mask, 0.0)
    assert flags.tolist() == [True, False]
    assert t[0] == 0.0


def test_sign_flips_exhaustive_and_random():
    rows, exhaustive = sign_flips(3, 8, seed=0)
    assert exhaustive and len(rows) == 8
    assert {tuple(r) for r in rows} == set(itertools.product((1.0, -1.0), repeat=3))
    rows, exhaustive = sign_flips(10, 500, seed=1)
    assert not exhaustive and len(rows) == 501
    np.testing.assert_array_equal(rows[0], 1.0)
    assert len({tuple(r) for r in rows}) == 501  # identity once, flips distinct
    rows40, _ = sign_flips(40, 50, seed=2)
    assert not np.any(np.all(rows40[1:] == 1.0, axis=1))
    with pytest.raises(InvalidArgumentError):
        sign_flips(4, 0, 0)


def test_exhaustive_p_values_are_multiples_of_one_eighth():
    rng = np.random.default_rng(2)
    mask = BrainMask.full(VoxelGrid((3, 3, 3)))
    maps = rng.standard_normal((3, 27)) + 0.5
    res = sign_flip_permutation_test(maps, mask, n_perm=100, sigma_mm=3.0, tfce_cfg=FAST)
    assert res.exhaustive and res.n_evaluated == 8
    np.testing.assert_allclose(res.p * 8, np.round(res.p * 8))


def test_strong_signal_reaches_minimum_p():
    rng = np.random.default_rng(3)
    mask = BrainMask.full(VoxelGrid((4, 4, 4)))
    maps = 0.3 + 0.05 * rng.standard_normal((12, 64))
    res = sign_flip_permutation_test(maps, mask, n_perm=200, tfce_cfg=FAST, seed=5)
    assert res.min_p == pytest.approx(1 / 201)
    assert res.significant(0.05).all()


def test_p_values_are_monotone_in_statistic():
    rng = np.random.default_rng(4)
    mask = BrainMask.full(VoxelGrid((4, 4, 2)))
    maps = rng.standard_normal((8, 32)) * 0.1 + np.linspace(0, 0.2, 32)
    res = sign_flip_permutation_test(maps, mask, n_perm=100, tfce_cfg=FAST)
    order = np.argsort(res.statistic)
    assert np.all(np.diff(res.p[order]) <= 1e-15)


def test_null_family_wise_rate_small_scale():
    rng = np.random.default_rng(6)
    mask = BrainMask.full(VoxelGrid((4, 4, 4)))
    hits = 0
    reps = 60
    for r in range(reps):
        maps = rng.standard_normal((8, 64))
        res = sign_flip_permutation_test(maps, mask, n_perm=99, tfce_cfg=FAST, seed=r)
        hits += res.significant(0.05).any()
    assert hits / reps <= 0.15


def test_results_do_not_depend_on_worker_count():
    rng = np.random.default_rng(7)
    mask = BrainMask.full(VoxelGrid((4, 4, 3)))
    maps = rng.standard_normal((9, 48)) * 0.2 + 0.05
    a = sign_flip_permutation_test(maps, mask, n_perm=60, tfce_cfg=FAST, n_jobs=1)
    b = sign_flip_permutation_test(maps, mask, n_perm=60, tfce_cfg=FAST, n_jobs=4)
    np.testing.assert_array_equal(a.p, b.p)
    np.testing.assert_array_equal(a.null_max, b.null_max)


def test_per_subject_mean_statistic():
    rng = np.random.default_rng(8)
    mask = BrainMask.full(VoxelGrid((3, 3, 3)))
    pp = rng.standard_normal((20, 27)) * 0.05
    pp[:, 13] += 0.3
    res = per_subject_permutation_test(pp, mask, n_perm=200, tfce_cfg=FAST)
    assert res.p[13] == res.min_p
    with pytest.raises(InvalidArgumentError):
        per_subject_permutation_test(pp, mask, statistic="median")


def test_input_validation():
    mask = BrainMask.full(VoxelGrid((2, 2, 2)))
    with pytest.raises(InvalidArgumentError):
        sign_flip_permutation_test(np.zeros((1, 8)), mask)
    with pytest.raises(InvalidArgumentError):
        sign_flip_permutation_test(np.zeros((3, 7)), mask)
    with pytest.raises(InvalidArgumentError):
        sign_flip_permutation_test(np.full((3, 8), np.nan), mask)
