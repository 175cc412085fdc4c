"""RBF kernels, the median bandwidth heuristic and the MMD estimator."""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import InvalidArgumentError


def _check_bandwidth(bandwidth):
    if not np.isfinite(bandwidth) or bandwidth <= 0:
        raise InvalidArgumentError(f"kernel bandwidth must be positive, got {bandwidth}")


def sq_dists(A, B) -> np.ndarray:
    return cdist(np.atleast_2d(A), np.atleast_2d(B), "sqeuclidean")


def rbf_kernel(A, B, bandwidth: float) -> np.ndarray:
    """``k(a, b) = exp(-||a - b||^2 / (2 * bandwidth^2))``."""
    _check_bandwidth(bandwidth)
    return np.exp(-sq_dists(A, B) / (2.0 * bandwidth**2))


def median_heuristic(*arrays) -> float:
    """Median pairwise Euclidean distance of the pooled rows.

    Falls back to 1.0 when every pooled point coincides.
    """
    pooled = np.vstack([np.atleast_2d(a) for a in arrays])
    if len(pooled) < 2:
        return 1.0
    med = float(np.median(pdist(pooled)))
    return med if med > 0 else 1.0


def mmd_rbf(A, B, weights_A=None, bandwidth: float = 1.0) -> float:
    """Biased (V-statistic) squared MMD between the rows of ``A`` and ``B``.

    ``weights_A`` reweights the empirical distribution of ``A``; they are
    normalized to sum to one, so only relative weights matter.
    """
    _check_bandwidth(bandwidth)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise InvalidArgumentError(f"feature dims differ: {A.shape[1]} vs {B.shape[1]}")
    if weights_A is None:
        a = np.full(len(A), 1.0 / len(A))
    else:
        a = np.asarray(weights_A, dtype=float)
        if a.shape != (len(A),) or np.any(a < 0) or not np.all(np.isfinite(a)) or a.sum() <= 0:
            raise InvalidArgumentError("weights_A must be nonnegative, finite and not all zero")
        a = a / a.sum()
    b = np.full(len(B), 1.0 / len(B))
    val = (
        a @ rbf_kernel(A, A, bandwidth) @ a
        - 2.0 * a @ rbf_kernel(A, B, bandwidth) @ b
        + b @ rbf_kernel(B, B, bandwidth) @ b
    )
    return float(max(val, 0.0))
