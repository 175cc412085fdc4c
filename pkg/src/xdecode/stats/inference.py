"""Voxelwise one-sample inference with sign flipping, TFCE and max-statistic FWE.

All maps are masked-order vectors, ``(n_observations, n_voxels)``, that are
already centered (chance subtracted). Observations are subjects for the group
test and data partitions for the per-subject test.
"""

from __future__ import annotations

import itertools
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ..errors import InvalidArgumentError
from ..volume import BrainMask
from .tfce import TfceConfig, TfceOperator

# relative size below which a variance is treated as exactly zero
_ZERO_VAR_RTOL = 1e-10


def gaussian_kernel_1d(sigma_mm: float, voxel_mm: float) -> np.ndarray:
    """Sampled Gaussian truncated at 3 sigma (unnormalized)."""
    if sigma_mm <= 0:
        return np.ones(1)
    r = int(np.floor(3.0 * sigma_mm / voxel_mm + 1e-9))
    x = np.arange(-r, r + 1) * voxel_mm
    return np.exp(-(x**2) / (2.0 * sigma_mm**2))


class VarianceSmoother:
    """Mask-renormalized, truncated Gaussian smoothing of masked maps."""

    def __init__(self, mask: BrainMask, sigma_mm: float):
        self.mask = mask
        self.sigma_mm = float(sigma_mm)
        self.kernels = [gaussian_kernel_1d(self.sigma_mm, vs) for vs in mask.grid.voxel_size_mm]
        self.identity = all(len(k) == 1 for k in self.kernels)
        if not self.identity:
            self.norm = self._convolve(mask.included.astype(float))[mask.included]

    def _convolve(self, vol):
        for axis, k in enumerate(self.kernels):
            if len(k) > 1:
                vol = ndimage.correlate1d(vol, k, axis=axis, mode="constant", cval=0.0)
        return vol

    def __call__(self, values: np.ndarray) -> np.ndarray:
        if self.identity:
            return np.asarray(values, dtype=float).copy()
        vol = np.zeros(self.mask.grid.dims)
        vol[self.mask.included] = values
        return self._convolve(vol)[self.mask.included] / self.norm


def _t_from_moments(mean, var, n, smoother):
    var_s = smoother(var)
    flags = var_s <= 0
    t = np.zeros_like(mean)
    ok = ~flags
    t[ok] = mean[ok] / np.sqrt(var_s[ok] / n)
    return t, flags


def _moments(maps):
    n = maps.shape[0]
    mean = maps.mean(axis=0)
    sumsq = np.einsum("ij,ij->j", maps, maps)
    var = np.maximum(sumsq - n * mean**2, 0.0) / (n - 1)
    var[var <= _ZERO_VAR_RTOL * sumsq / n] = 0.0
    return mean, var, sumsq


def smoothed_one_sample_t(maps, mask: BrainMask, sigma_mm: float = 6.0):
    """Pseudo-t map with spatially smoothed variance.

    ``t = mean / sqrt(smooth(var) / n)``; voxels whose smoothed variance is
    zero get ``t = 0`` and are reported in ``flags``.

    Returns
    -------
    t : ndarray, shape (n_voxels,)
    flags : ndarray of bool, shape (n_voxels,)
    """
    maps = _check_maps(maps, mask, min_obs=2)
    mean, var, _ = _moments(maps)
    return _t_from_moments(mean, var, maps.shape[0], VarianceSmoother(mask, sigma_mm))


@dataclass(frozen=True, eq=False)
class PValueMap:
    mask: BrainMask
    p: np.ndarray
    statistic: np.ndarray
    n_permutations: int
    n_evaluated: int
    sigma_mm: float
    seed: int
    exhaustive: bool = False
    null_max: np.ndarray = field(default=None, repr=False)
    flags: np.ndarray = field(default=None, repr=False)

    def significant(self, alpha: float = 0.05) -> np.ndarray:
        return self.p < alpha

    @property
    def min_p(self) -> float:
        return float(self.p.min())


def _check_maps(maps, mask, min_obs):
    maps = np.asarray(maps, dtype=float)
    if maps.ndim != 2 or maps.shape[1] != mask.n_included:
        raise InvalidArgumentError(
            f"maps must be (n_obs, {mask.n_included}) in masked order, got {maps.shape}"
        )
    if maps.shape[0] < min_obs:
        raise InvalidArgumentError(f"need at least {min_obs} observations, got {maps.shape[0]}")
    if not np.all(np.isfinite(maps)):
        raise InvalidArgumentError("maps contain non-finite values")
    return maps


def sign_flips(n_obs: int, n_perm: int, seed: int):
    """Identity row followed by the flips to evaluate.

    Returns ``(flips, exhaustive)``. When ``n_perm`` reaches the ``2**n_obs``
    distinct assignments every assignment is enumerated once instead.
    Random flips never repeat the identity; for up to 24 observations they
    are also distinct from each other.
    """
    if int(n_perm) < 1:
        raise InvalidArgumentError(f"n_perm must be >= 1, got {n_perm}")
    if n_obs < 63 and n_perm >= 2**n_obs:
        rows = np.array(list(itertools.product((1.0, -1.0), repeat=n_obs)))
        return rows, True
    rng = np.random.default_rng(seed)
    n_perm = int(n_perm)
    if n_obs <= 24:
        # distinct non-identity assignments; code 0 is the identity
        codes = rng.choice(2**n_obs - 1, size=n_perm, replace=False) + 1
        bits = (codes[:, None] >> np.arange(n_obs)[None, :]) & 1
        random = 1.0 - 2.0 * bits
    else:
        random = rng.choice(np.array([1.0, -1.0]), size=(n_perm, n_obs))
        while True:
            ident = np.all(random == 1.0, axis=1)
            if not ident.any():
                break
            random[ident] = rng.choice(np.array([1.0, -1.0]), size=(int(ident.sum()), n_obs))
    return np.vstack([np.ones((1, n_obs)), random]), False


def _default_workers():
    try:
        return max(1, int(os.environ.get("XDECODE_THREADS", "1")))
    except ValueError:
        return 1


def _permutation_test(maps, mask, n_perm, sigma_mm, tfce_cfg, seed, statistic, n_jobs):
    maps = _check_maps(maps, mask, min_obs=2)
    n = maps.shape[0]
    tfce = TfceOperator(mask, tfce_cfg)
    smoother = VarianceSmoother(mask, sigma_mm)
    sumsq = np.einsum("ij,ij->j", maps, maps)

    def stat_map(signs):
        mean = signs @ maps / n
        if statistic == "mean":
            return mean, None
        var = np.maximum(sumsq - n * mean**2, 0.0) / (n - 1)
        var[var <= _ZERO_VAR_RTOL * sumsq / n] = 0.0
        return _t_from_moments(mean, var, n, smoother)

    flips, exhaustive = sign_flips(n, n_perm, seed)
    stat, flags = stat_map(flips[0])
    observed = tfce(stat)

    def chunk_max(rows):
        return [float(tfce.positive(stat_map(s)[0]).max(initial=0.0)) for s in rows]

    n_jobs = n_jobs or _default_workers()
    if n_jobs > 1 and len(flips) > 1:
        # results are placed by flip index, so the worker count cannot
        # change the outcome
        chunks = np.array_split(flips, n_jobs)
        with ThreadPoolExecutor(n_jobs) as ex:
            null_max = np.concatenate([np.asarray(r) for r in ex.map(chunk_max, chunks)])
    else:
        null_max = np.asarray(chunk_max(flips))
    counts = (null_max[None, :] >= observed[:, None]).sum(axis=1)
    p = counts / len(flips)
    return PValueMap(
        mask=mask,
        p=p,
        statistic=observed,
        n_permutations=int(n_perm),
        n_evaluated=len(flips),
        sigma_mm=float(sigma_mm),
        seed=int(seed),
        exhaustive=exhaustive,
        null_max=null_max,
        flags=flags,
    )


def sign_flip_permutation_test(
    maps,
    mask: BrainMask,
    n_perm: int = 10000,
    sigma_mm: float = 6.0,
    tfce_cfg: TfceConfig | None = None,
    seed: int = 0,
    n_jobs: int | None = None,
) -> PValueMap:
    """Group one-sample test: TFCE of the variance-smoothed pseudo-t.

    The identity assignment is always evaluated, so
    ``p(v) = #{flips with max >= observed(v)} / (n_perm + 1)`` and the
    smallest attainable p-value is ``1 / (n_perm + 1)``. When ``n_perm``
    reaches ``2**n_subjects`` every sign assignment is enumerated instead.
    """
    return _permutation_test(maps, mask, n_perm, sigma_mm, tfce_cfg, seed, "t", n_jobs)


def per_subject_permutation_test(
    per_partition,
    mask: BrainMask,
    n_perm: int = 10000,
    tfce_cfg: TfceConfig | None = None,
    seed: int = 0,
    statistic: str = "mean",
    n_jobs: int | None = None,
) -> PValueMap:
    """Single-subject test with data partitions as the exchangeable units.

    ``statistic="mean"`` enhances the mean centered accuracy map (the
    default: accuracies from different partitions share training data, so a
    between-partition t would overstate precision). ``"t"`` uses the
    unsmoothed one-sample t instead.
    """
    if statistic not in ("mean", "t"):
        raise InvalidArgumentError(f"statistic must be 'mean' or 't', got {statistic!r}")
    return _permutation_test(per_partition, mask, n_perm, 0.0, tfce_cfg, seed, statistic, n_jobs)
