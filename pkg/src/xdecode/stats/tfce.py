"""Threshold-free cluster enhancement on masked 3D maps.

For a positive map with global maximum ``m``, ``dh = m / n_steps`` and
thresholds ``h_i = m * (i / n_steps)`` (so ``h_n`` is exactly ``m``)::

    TFCE(v) = sum_{i : h_i <= value(v)} e(h_i, v)**E * h_i**H * dh

where ``e(h, v)`` is the voxel count of the connected component of
``{u : value(u) >= h}`` that contains ``v``. Negative values are enhanced on
the negated map and the sign is restored.

Components are tracked with a union-find that adds voxels while sweeping the
thresholds downwards, so each map costs ``O(n_steps * n_voxels)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from ..errors import InvalidArgumentError
from ..volume import BrainMask, VoxelGrid


@dataclass(frozen=True)
class TfceConfig:
    E: float = 0.5
    H: float = 2.0
    n_steps: int = 100
    connectivity: int = 26

    def __post_init__(self):
        if not (self.E > 0 and self.H > 0):
            raise InvalidArgumentError(f"TFCE exponents must be positive (E={self.E}, H={self.H})")
        if int(self.n_steps) < 1:
            raise InvalidArgumentError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.connectivity not in (6, 18, 26):
            raise InvalidArgumentError(f"connectivity must be 6, 18 or 26, got {self.connectivity}")


def neighbor_offsets(connectivity: int) -> np.ndarray:
    d = np.array([(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)])
    l1 = np.abs(d).sum(axis=1)
    limit = {6: 1, 18: 2, 26: 3}[connectivity]
    return d[(l1 > 0) & (l1 <= limit)]


def mask_adjacency(mask: BrainMask, connectivity: int = 26):
    """CSR adjacency ``(indptr, indices)`` between voxels in masked order."""
    coords = mask.coords()
    index_vol = mask.index_volume()
    dims = np.asarray(mask.grid.dims)
    rows = []
    for off in neighbor_offsets(connectivity):
        nb = coords + off
        ok = np.all((nb >= 0) & (nb < dims), axis=1)
        src = np.flatnonzero(ok)
        dst = index_vol[nb[ok, 0], nb[ok, 1], nb[ok, 2]]
        keep = dst >= 0
        rows.append(np.stack([src[keep], dst[keep]], axis=1))
    pairs = np.concatenate(rows) if rows else np.empty((0, 2), np.int64)
    pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
    indptr = np.zeros(len(coords) + 1, dtype=np.int64)
    np.add.at(indptr, pairs[:, 0] + 1, 1)
    return np.cumsum(indptr), pairs[:, 1].astype(np.int64)


@numba.njit(cache=True, nogil=True)
def _find(parent, v):
    while parent[v] != v:
        parent[v] = parent[parent[v]]
        v = parent[v]
    return v


@numba.njit(cache=True, nogil=True)
def _tfce_positive(vals, indptr, indices, n_steps, E, H, out):
    n = vals.shape[0]
    gmax = 0.0
    for v in range(n):
        if vals[v] > gmax:
            gmax = vals[v]
    if gmax <= 0.0:
        return
    dh = gmax / n_steps
    order = np.argsort(-vals, kind="mergesort")
    parent = np.arange(n)
    size = np.zeros(n, dtype=np.int64)
    active = np.zeros(n, dtype=np.bool_)
    ptr = 0
    for i in range(n_steps, 0, -1):
        h = gmax * (i / n_steps)
        while ptr < n and vals[order[ptr]] >= h:
            v = order[ptr]
            active[v] = True
            size[v] = 1
            for q in range(indptr[v], indptr[v + 1]):
                u = indices[q]
                if active[u]:
                    ru = _find(parent, u)
                    rv = _find(parent, v)
                    if ru != rv:
                        if size[ru] < size[rv]:
                            ru, rv = rv, ru
                        parent[rv] = ru
                        size[ru] += size[rv]
            ptr += 1
        w = h**H * dh
        for p in range(ptr):
            v = order[p]
            out[v] += size[_find(parent, v)] ** E * w


class TfceOperator:
    """TFCE bound to a mask; works on masked-order value vectors."""

    def __init__(self, mask: BrainMask, cfg: TfceConfig | None = None):
        self.mask = mask
        self.cfg = cfg or TfceConfig()
        self.indptr, self.indices = mask_adjacency(mask, self.cfg.connectivity)

    def _positive(self, vals):
        out = np.zeros(len(vals))
        _tfce_positive(
            np.ascontiguousarray(vals, dtype=np.float64),
            self.indptr,
            self.indices,
            int(self.cfg.n_steps),
            float(self.cfg.E),
            float(self.cfg.H),
            out,
        )
        return out

    def positive(self, values) -> np.ndarray:
        """Enhancement of the positive part only."""
        vals = np.asarray(values, dtype=float)
        if vals.shape != (self.mask.n_included,):
            raise InvalidArgumentError(f"expected {self.mask.n_included} masked values, got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise InvalidArgumentError("TFCE input must be finite")
        return self._positive(vals)

    def __call__(self, values) -> np.ndarray:
        vals = np.asarray(values, dtype=float)
        pos = self.positive(vals)
        if np.any(vals < 0):
            pos -= self._positive(-vals)
        return pos


def tfce_enhance(values, cfg: TfceConfig | None = None, mask: BrainMask | None = None) -> np.ndarray:
    """Enhance a 3D map; voxels outside ``mask`` are ignored and returned as 0."""
    vol = np.asarray(values, dtype=float)
    if vol.ndim != 3:
        raise InvalidArgumentError(f"expected a 3D map, got shape {vol.shape}")
    if mask is None:
        mask = BrainMask.full(VoxelGrid(vol.shape))
    elif mask.grid.dims != vol.shape:
        raise InvalidArgumentError("mask and map dims differ")
    flat = vol[mask.included]
    if not np.all(np.isfinite(flat)):
        raise InvalidArgumentError("TFCE input must be finite inside the mask")
    out = np.zeros(vol.shape)
    out[mask.included] = TfceOperator(mask, cfg)(flat)
    return out
