"""Subject datasets and the on-disk volume bundle format.

A bundle is a directory::

    manifest.json   format, dims, voxel size, counts, prevalence, checksums
    samples.f32     little-endian float32, sample-major, x fastest
    mask.u8         one byte per voxel (0/1), x fastest
    trials.csv      instance_id,trial_id,label,domain   (dataset bundles only)

"x fastest" means the byte offset of voxel ``(x, y, z)`` of sample ``s`` is
``4 * (((s * nz + z) * ny + y) * nx + x)``. Score and p-value maps use the
same layout without ``trials.csv``.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import BundleError, InvalidArgumentError
from .partitioning import SOURCE, TARGET, TrialTable
from .volume import BrainMask, VoxelGrid, masked_matrix

FORMAT = "xdecode-bundle"
VERSION = 1
SAMPLES_FILE = "samples.f32"
MASK_FILE = "mask.u8"
TRIALS_FILE = "trials.csv"
MANIFEST_FILE = "manifest.json"


@dataclass(frozen=True, eq=False)
class SubjectDataset:
    """Samples of one subject in both domains.

    ``samples`` is a float32 ``(n, nx, ny, nz)`` stack; row ``i`` belongs to
    ``trials`` entry ``i``.
    """

    mask: BrainMask
    samples: np.ndarray
    trials: TrialTable
    instance_id: np.ndarray = None
    name: str = "subject"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float32)
        if samples.ndim != 4 or samples.shape[1:] != self.mask.grid.dims:
            raise InvalidArgumentError(
                f"samples of shape {samples.shape} do not match grid {self.mask.grid.dims}"
            )
        if len(samples) != len(self.trials):
            raise InvalidArgumentError("one trial-table row is required per sample")
        ids = np.arange(len(samples)) if self.instance_id is None else np.asarray(self.instance_id)
        if ids.shape != (len(samples),) or len(np.unique(ids)) != len(ids):
            raise InvalidArgumentError("instance ids must be unique, one per sample")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "instance_id", ids.astype(np.int64))

    @property
    def grid(self) -> VoxelGrid:
        return self.mask.grid

    @property
    def n_samples(self) -> int:
        return len(self.samples)

    @cached_property
    def features(self) -> np.ndarray:
        """``(n_samples, n_mask_voxels)`` float64 matrix in masked order."""
        return masked_matrix(self.samples, self.mask).astype(np.float64)

    def counts(self) -> dict:
        return {
            SOURCE: int(np.sum(self.trials.domain == SOURCE)),
            TARGET: int(np.sum(self.trials.domain == TARGET)),
            "total": self.n_samples,
        }


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _to_disk(vols: np.ndarray) -> bytes:
    return np.ascontiguousarray(vols.astype("<f4").transpose(0, 3, 2, 1)).tobytes()


def _from_disk(raw: bytes, n: int, dims) -> np.ndarray:
    nx, ny, nz = dims
    arr = np.frombuffer(raw, dtype="<f4").reshape(n, nz, ny, nx)
    return arr.transpose(0, 3, 2, 1).astype(np.float32)


def _write_arrays(path: Path, mask: BrainMask, vols: np.ndarray) -> dict:
    path.mkdir(parents=True, exist_ok=True)
    (path / SAMPLES_FILE).write_bytes(_to_disk(vols))
    (path / MASK_FILE).write_bytes(np.ascontiguousarray(mask.included.T).astype(np.uint8).tobytes())
    return {SAMPLES_FILE: _sha256(path / SAMPLES_FILE), MASK_FILE: _sha256(path / MASK_FILE)}


def _write_manifest(path: Path, manifest: dict):
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    (path / MANIFEST_FILE).write_text(text)


def write_bundle(dataset: SubjectDataset, path) -> Path:
    """Write ``dataset`` as a bundle directory at ``path``."""
    path = Path(path)
    sums = _write_arrays(path, dataset.mask, dataset.samples)
    with open(path / TRIALS_FILE, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance_id", "trial_id", "label", "domain"])
        t = dataset.trials
        for row in zip(dataset.instance_id.tolist(), t.trial_id.tolist(), t.label.tolist(), t.domain.tolist()):
            w.writerow(row)
    sums[TRIALS_FILE] = _sha256(path / TRIALS_FILE)
    counts = dataset.counts()
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "kind": "dataset",
        "name": dataset.name,
        "dims": list(dataset.grid.dims),
        "voxel_size_mm": list(dataset.grid.voxel_size_mm),
        "endianness": "little",
        "dtype": "float32",
        "layout": "sample-major, x fastest",
        "n_samples": counts,
        "n_mask_voxels": dataset.mask.n_included,
        "prevalence": {SOURCE: dataset.trials.prevalence(SOURCE), TARGET: dataset.trials.prevalence(TARGET)},
        "files": {"samples": SAMPLES_FILE, "mask": MASK_FILE, "trials": TRIALS_FILE},
        "sha256": sums,
        "meta": dataset.meta,
    }
    _write_manifest(path, manifest)
    return path


def _load_manifest(path: Path, kind: str) -> dict:
    mpath = path / MANIFEST_FILE
    if not mpath.is_file():
        raise BundleError("manifest", f"{mpath} not found")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise BundleError("manifest", f"invalid JSON: {exc}") from exc
    if manifest.get("format") != FORMAT:
        raise BundleError("format", f"expected {FORMAT!r}, got {manifest.get('format')!r}")
    if manifest.get("kind") != kind:
        raise BundleError("kind", f"expected a {kind} bundle, got {manifest.get('kind')!r}")
    if manifest.get("endianness") != "little" or manifest.get("dtype") != "float32":
        raise BundleError("endianness", "only little-endian float32 bundles are supported")
    return manifest


def _check_sum(path: Path, manifest: dict, fname: str):
    expected = manifest.get("sha256", {}).get(fname)
    if expected is not None and _sha256(path / fname) != expected:
        raise BundleError(f"sha256.{fname}", "checksum mismatch")


def _read_arrays(path: Path, manifest: dict, n: int, count_field: str):
    try:
        grid = VoxelGrid(tuple(manifest["dims"]), tuple(manifest["voxel_size_mm"]))
    except (KeyError, TypeError, InvalidArgumentError) as exc:
        raise BundleError("dims", f"invalid grid description: {exc}") from exc
    nvox = grid.n_voxels
    mfile = path / MASK_FILE
    if not mfile.is_file():
        raise BundleError("mask", f"{mfile} not found")
    mraw = mfile.read_bytes()
    if len(mraw) != nvox:
        raise BundleError("mask", f"expected {nvox} bytes, found {len(mraw)}")
    _check_sum(path, manifest, MASK_FILE)
    included = np.frombuffer(mraw, dtype=np.uint8).reshape(grid.dims[::-1]).T.astype(bool)
    try:
        mask = BrainMask(grid, included)
    except InvalidArgumentError as exc:
        raise BundleError("mask", str(exc)) from exc
    if "n_mask_voxels" in manifest and manifest["n_mask_voxels"] != mask.n_included:
        raise BundleError("n_mask_voxels", f"manifest says {manifest['n_mask_voxels']}, mask has {mask.n_included}")

    sfile = path / SAMPLES_FILE
    if not sfile.is_file():
        raise BundleError("samples", f"{sfile} not found")
    size = sfile.stat().st_size
    if size % (4 * nvox):
        raise BundleError("samples", f"array of {size} bytes is truncated (not a whole number of volumes)")
    if size != 4 * nvox * n:
        raise BundleError(count_field, f"manifest claims {n} volumes but the array holds {size // (4 * nvox)}")
    _check_sum(path, manifest, SAMPLES_FILE)
    return mask, _from_disk(sfile.read_bytes(), n, grid.dims)


def read_bundle(path) -> SubjectDataset:
    """Load and validate a dataset bundle."""
    path = Path(path)
    manifest = _load_manifest(path, "dataset")
    try:
        counts = manifest["n_samples"]
        n = int(counts["total"])
    except (KeyError, TypeError, ValueError) as exc:
        raise BundleError("n_samples", "missing or malformed") from exc
    if int(counts.get(SOURCE, -1)) + int(counts.get(TARGET, -1)) != n:
        raise BundleError("n_samples", "per-domain counts do not add up to the total")
    mask, samples = _read_arrays(path, manifest, n, "n_samples")

    tfile = path / TRIALS_FILE
    if not tfile.is_file():
        raise BundleError("trials", f"{tfile} not found")
    _check_sum(path, manifest, TRIALS_FILE)
    with open(tfile, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != n:
        raise BundleError("n_samples", f"manifest claims {n} samples, trial table has {len(rows)} rows")
    try:
        trials = TrialTable(
            [int(r["trial_id"]) for r in rows],
            [int(r["label"]) for r in rows],
            [r["domain"] for r in rows],
        )
        ids = np.array([int(r["instance_id"]) for r in rows])
    except (KeyError, ValueError, InvalidArgumentError) as exc:
        raise BundleError("trials", str(exc)) from exc
    for dom in (SOURCE, TARGET):
        if int(np.sum(trials.domain == dom)) != int(counts[dom]):
            raise BundleError("n_samples", f"{dom} count disagrees with the trial table")
        claimed = manifest.get("prevalence", {}).get(dom)
        actual = trials.prevalence(dom)
        if claimed is not None and not (
            (np.isnan(actual) and claimed is None) or abs(float(claimed) - actual) <= 1e-6
        ):
            raise BundleError("prevalence", f"{dom} prevalence {claimed} disagrees with trial table ({actual})")
    return SubjectDataset(mask, samples, trials, ids, manifest.get("name", path.name), manifest.get("meta", {}))


def inspect_bundle(path) -> dict:
    """Validate a bundle and return a summary dictionary."""
    ds = read_bundle(path)
    return {
        "name": ds.name,
        "dims": list(ds.grid.dims),
        "voxel_size_mm": list(ds.grid.voxel_size_mm),
        "n_mask_voxels": ds.mask.n_included,
        "n_samples": ds.counts(),
        "prevalence": {d: ds.trials.prevalence(d) for d in (SOURCE, TARGET)},
        "n_trials": {d: int(len(np.unique(ds.trials.trial_id[ds.trials.domain == d]))) for d in (SOURCE, TARGET)},
    }


def write_volumes(path, mask: BrainMask, values: np.ndarray, meta: dict | None = None) -> Path:
    """Write masked-order maps ``(n_maps, n_voxels)`` as a volume bundle.

    Voxels outside the mask are stored as NaN.
    """
    path = Path(path)
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if values.shape[1] != mask.n_included:
        raise InvalidArgumentError(f"expected {mask.n_included} masked values per map")
    vols = np.full((len(values),) + mask.grid.dims, np.nan, dtype=np.float32)
    vols[:, mask.included] = values.astype(np.float32)
    sums = _write_arrays(path, mask, vols)
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "kind": "volume",
        "dims": list(mask.grid.dims),
        "voxel_size_mm": list(mask.grid.voxel_size_mm),
        "endianness": "little",
        "dtype": "float32",
        "layout": "sample-major, x fastest",
        "n_volumes": len(values),
        "n_mask_voxels": mask.n_included,
        "files": {"samples": SAMPLES_FILE, "mask": MASK_FILE},
        "sha256": sums,
        "meta": meta or {},
    }
    _write_manifest(path, manifest)
    return path


def read_volumes(path):
    """Return ``(mask, values, meta)`` with values ``(n_maps, n_voxels)`` float64."""
    path = Path(path)
    manifest = _load_manifest(path, "volume")
    try:
        n = int(manifest["n_volumes"])
    except (KeyError, TypeError, ValueError) as exc:
        raise BundleError("n_volumes", "missing or malformed") from exc
    mask, vols = _read_arrays(path, manifest, n, "n_volumes")
    return mask, vols[:, mask.included].astype(np.float64), manifest.get("meta", {})
