"""Voxel grids, brain masks and searchlight sphere neighbourhoods.

Arrays indexed by voxel use ``[x, y, z]`` order; 4D sample stacks are
``[sample, x, y, z]``. The masked voxel order used throughout the package is
``np.flatnonzero(mask.included)``, i.e. C order over ``(x, y, z)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class VoxelGrid:
    dims: tuple[int, int, int]
    voxel_size_mm: tuple[float, float, float] = (3.0, 3.0, 3.0)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        vs = tuple(float(v) for v in self.voxel_size_mm)
        if len(dims) != 3 or min(dims) < 1:
            raise InvalidArgumentError(f"grid dims must be three integers >= 1, got {self.dims}")
        if len(vs) != 3 or not all(np.isfinite(vs)) or min(vs) <= 0:
            raise InvalidArgumentError(f"voxel sizes must be three positive reals, got {self.voxel_size_mm}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "voxel_size_mm", vs)

    @property
    def n_voxels(self) -> int:
        return int(np.prod(self.dims))


@dataclass(frozen=True, eq=False)
class BrainMask:
    grid: VoxelGrid
    included: np.ndarray

    def __post_init__(self):
        inc = np.asarray(self.included, dtype=bool)
        if inc.shape != self.grid.dims:
            raise InvalidArgumentError(f"mask shape {inc.shape} does not match grid dims {self.grid.dims}")
        if not inc.any():
            raise InvalidArgumentError("mask has no included voxels")
        inc = inc.copy()
        inc.setflags(write=False)
        object.__setattr__(self, "included", inc)

    @classmethod
    def full(cls, grid: VoxelGrid) -> "BrainMask":
        return cls(grid, np.ones(grid.dims, dtype=bool))

    @property
    def n_included(self) -> int:
        return int(self.included.sum())

    def flat_indices(self) -> np.ndarray:
        """Flat C-order indices of the included voxels (the masked order)."""
        return np.flatnonzero(self.included)

    def coords(self) -> np.ndarray:
        """``(n_included, 3)`` voxel coordinates in masked order."""
        return np.argwhere(self.included)

    def index_volume(self) -> np.ndarray:
        """Volume holding each included voxel's masked index, -1 elsewhere."""
        idx = np.full(self.grid.dims, -1, dtype=np.int64)
        idx[self.included] = np.arange(self.n_included)
        return idx

    def __eq__(self, other):
        if not isinstance(other, BrainMask):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.included, other.included)


@dataclass(frozen=True, eq=False)
class SphereNeighborhood:
    """Effective searchlight sphere around ``center``.

    ``member_offsets`` holds only the offsets that land inside both the grid
    and the mask, in lexicographic order. ``member_index`` gives the same
    members as positions in the masked voxel order.
    """

    center: tuple[int, int, int]
    member_offsets: np.ndarray
    radius_mm: float
    member_index: np.ndarray = field(repr=False)

    @property
    def members(self) -> np.ndarray:
        return np.asarray(self.center) + self.member_offsets

    @property
    def n_members(self) -> int:
        return len(self.member_offsets)


def _check_voxel_size(voxel_size_mm):
    vs = np.asarray(voxel_size_mm, dtype=float)
    if vs.shape != (3,) or not np.all(np.isfinite(vs)) or np.any(vs <= 0):
        raise InvalidArgumentError(f"voxel sizes must be three positive reals, got {voxel_size_mm}")
    return vs


def sphere_offsets(radius_mm: float, voxel_size_mm=(3.0, 3.0, 3.0)) -> np.ndarray:
    """Integer offsets ``o`` with ``||o * voxel_size||_2 <= radius_mm``.

    Returns an ``(n, 3)`` int array in lexicographic order.
    """
    if not np.isfinite(radius_mm) or radius_mm <= 0:
        raise InvalidArgumentError(f"radius must be positive, got {radius_mm}")
    vs = _check_voxel_size(voxel_size_mm)
    reach = np.floor(radius_mm / vs).astype(int)
    axes = [np.arange(-r, r + 1) for r in reach]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    dist2 = ((grid * vs) ** 2).sum(axis=1)
    # squared-distance comparison with a relative slack so that lattice
    # points exactly on the sphere survive rounding in the multiply
    keep = dist2 <= radius_mm**2 * (1 + 1e-12)
    # meshgrid(ij) + reshape already yields lexicographic order
    return grid[keep].astype(np.int64)


def _neighborhood(center, offsets, mask, index_vol, radius_mm):
    dims = np.asarray(mask.grid.dims)
    pts = np.asarray(center) + offsets
    inside = np.all((pts >= 0) & (pts < dims), axis=1)
    pts_in = pts[inside]
    in_mask = mask.included[pts_in[:, 0], pts_in[:, 1], pts_in[:, 2]]
    eff = offsets[inside][in_mask]
    members = pts_in[in_mask]
    return SphereNeighborhood(
        center=tuple(int(c) for c in center),
        member_offsets=eff,
        radius_mm=float(radius_mm),
        member_index=index_vol[members[:, 0], members[:, 1], members[:, 2]],
    )


def sphere_centers(mask: BrainMask, radius_mm: float = 12.0) -> list[SphereNeighborhood]:
    """One clipped neighbourhood per included voxel, in masked order."""
    if not isinstance(mask, BrainMask):
        raise InvalidArgumentError("sphere_centers expects a BrainMask")
    offsets = sphere_offsets(radius_mm, mask.grid.voxel_size_mm)
    index_vol = mask.index_volume()
    return [_neighborhood(c, offsets, mask, index_vol, radius_mm) for c in mask.coords()]


def extract_sphere_features(samples: np.ndarray, sphere: SphereNeighborhood, mask: BrainMask) -> np.ndarray:
    """Gather the ``(n_samples, n_members)`` matrix of a sphere's voxels."""
    samples = np.asarray(samples)
    if samples.ndim != 4 or samples.shape[1:] != mask.grid.dims:
        raise InvalidArgumentError(
            f"sample stack of shape {samples.shape} does not match grid dims {mask.grid.dims}"
        )
    m = sphere.members
    return samples[:, m[:, 0], m[:, 1], m[:, 2]]


def masked_matrix(samples: np.ndarray, mask: BrainMask) -> np.ndarray:
    """Flatten a 4D stack into ``(n_samples, n_included)`` in masked order."""
    samples = np.asarray(samples)
    if samples.ndim != 4 or samples.shape[1:] != mask.grid.dims:
        raise InvalidArgumentError(
            f"sample stack of shape {samples.shape} does not match grid dims {mask.grid.dims}"
        )
    return samples.reshape(len(samples), -1)[:, mask.flat_indices()]


def unmask(values: np.ndarray, mask: BrainMask, fill=np.nan) -> np.ndarray:
    """Scatter masked-order values back into a volume (or a stack of them)."""
    values = np.asarray(values)
    lead = values.shape[:-1]
    out = np.full(lead + (mask.grid.n_voxels,), fill, dtype=np.result_type(values.dtype, np.float64))
    out[..., mask.flat_indices()] = values
    return out.reshape(lead + mask.grid.dims)
