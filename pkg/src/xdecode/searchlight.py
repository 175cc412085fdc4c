"""Sphere searchlight: baseline, naive and RTLC decoders at every masked voxel.

For each sphere and partition the three decoders are trained on the sphere's
voxels and scored by balanced accuracy on the target test set (the baseline is
also scored on the source test set). A voxel's value is the mean over
partitions. Fits that fail on degenerate data are recorded as NaN, excluded
from the mean and counted.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .adaptation import DomainPair, adapt_rtlc
from .dataset import SubjectDataset, write_volumes
from .errors import InvalidArgumentError, XDecodeError
from .linear import FitConfig, balanced_accuracy, fit_logistic, predict
from .partitioning import PartitionPlan, write_plans
from .volume import BrainMask, VoxelGrid, sphere_centers

SEARCHLIGHT_METHODS = ("baseline", "naive", "rtlc")
SOURCE_MAP = "baseline_source"


@dataclass(frozen=True)
class SearchlightConfig:
    radius_mm: float = 12.0
    methods: tuple = SEARCHLIGHT_METHODS
    n_partitions: int = 100
    n_t: int = 100
    fit: FitConfig = field(default_factory=FitConfig)
    rtlc_lambda: float = 1.0
    keep_per_partition: bool = True

    def __post_init__(self):
        methods = tuple(self.methods)
        if not methods:
            raise InvalidArgumentError("methods must be nonempty")
        bad = [m for m in methods if m not in SEARCHLIGHT_METHODS]
        if bad:
            raise InvalidArgumentError(f"searchlight methods must be among {SEARCHLIGHT_METHODS}, got {bad}")
        if int(self.n_partitions) < 1:
            raise InvalidArgumentError(f"n_partitions must be >= 1, got {self.n_partitions}")
        if self.radius_mm <= 0:
            raise InvalidArgumentError(f"radius_mm must be > 0, got {self.radius_mm}")
        # canonical order keeps outputs independent of how methods were listed
        object.__setattr__(self, "methods", tuple(m for m in SEARCHLIGHT_METHODS if m in methods))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["methods"] = list(self.methods)
        return d


@dataclass(frozen=True, eq=False)
class ScoreMap:
    """Mean balanced accuracy per masked voxel.

    ``shift`` is the total amount subtracted by :func:`center_scores`, so
    ``values + shift`` lies in ``[0, 1]``.
    """

    mask: BrainMask
    values: np.ndarray
    per_partition: np.ndarray | None = None
    nan_counts: np.ndarray | None = None
    name: str = ""
    shift: float = 0.0

    @property
    def grid(self) -> VoxelGrid:
        return self.mask.grid

    def volume(self, fill=np.nan) -> np.ndarray:
        out = np.full(self.grid.dims, fill, dtype=float)
        out[self.mask.included] = self.values
        return out


def center_scores(score_map: ScoreMap, chance: float = 0.5) -> ScoreMap:
    """Subtract the chance level from values and per-partition entries.

    Not idempotent: centering twice subtracts ``2 * chance``.
    """
    pp = None if score_map.per_partition is None else score_map.per_partition - chance
    return ScoreMap(
        score_map.mask,
        score_map.values - chance,
        pp,
        score_map.nan_counts,
        score_map.name,
        score_map.shift + chance,
    )


def order_invariant_mean(per_partition: np.ndarray):
    """Column means ignoring NaN, summed in sorted order.

    Sorting fixes the summation order, so permuting the rows gives a
    bit-identical result. Returns ``(means, nan_counts)``.
    """
    vals = np.sort(per_partition, axis=0)  # NaN sort last
    nan_counts = np.isnan(vals).sum(axis=0)
    n_ok = vals.shape[0] - nan_counts
    total = np.nansum(vals, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(n_ok > 0, total / np.maximum(n_ok, 1), np.nan)
    return means, nan_counts


@dataclass(frozen=True, eq=False)
class SearchlightResult:
    maps: dict
    config: SearchlightConfig
    n_fits: int
    n_failures: int
    wall_time_s: float
    failure_examples: tuple = ()

    @property
    def failure_rate(self) -> float:
        return self.n_failures / self.n_fits if self.n_fits else 0.0


def _score(model_predict, X, y):
    try:
        return balanced_accuracy(y, model_predict(X))
    except XDecodeError:
        return np.nan


def _sphere_scores(Xsph, y, plans, cfg, out, col, failures):
    """Fill ``out[name][p, col]`` for every plan; returns the number of fits."""
    n_fits = 0
    for p, plan in enumerate(plans):
        s_tr, s_te = plan.source_train, plan.source_test
        t_tr, t_te = plan.target_train, plan.target_test
        Xt_te, yt_te = Xsph[t_te], y[t_te]
        base = None
        n_fits += 1
        try:
            base = fit_logistic(Xsph[s_tr], y[s_tr], None, cfg.fit)
        except XDecodeError as exc:
            failures.append((col, p, "baseline", str(exc)))
        if base is not None:
            pred = lambda X, m=base: predict(m, X)[1]
            if "baseline" in cfg.methods:
                out["baseline"][p, col] = _score(pred, Xt_te, yt_te)
            out[SOURCE_MAP][p, col] = _score(pred, Xsph[s_te], y[s_te])
        if "naive" in cfg.methods:
            n_fits += 1
            try:
                X = np.vstack([Xsph[s_tr], Xsph[t_tr]])
                yy = np.concatenate([y[s_tr], y[t_tr]])
                m = fit_logistic(X, yy, None, cfg.fit)
                out["naive"][p, col] = _score(lambda X, m=m: predict(m, X)[1], Xt_te, yt_te)
            except XDecodeError as exc:
                failures.append((col, p, "naive", str(exc)))
        if "rtlc" in cfg.methods and base is not None:
            n_fits += 1
            try:
                pair = DomainPair(Xsph[s_tr], y[s_tr], Xsph[t_tr], y[t_tr])
                am = adapt_rtlc(pair, cfg.rtlc_lambda, cfg.fit, source_model=base)
                out["rtlc"][p, col] = _score(am.predict, Xt_te, yt_te)
            except XDecodeError as exc:
                failures.append((col, p, "rtlc", str(exc)))
        elif "rtlc" in cfg.methods:
            n_fits += 1
    return n_fits


def _workers(n_jobs):
    if n_jobs:
        return max(1, int(n_jobs))
    try:
        return max(1, int(os.environ.get("XDECODE_THREADS", "1")))
    except ValueError:
        return 1


def run_searchlight(
    dataset: SubjectDataset,
    plans: list[PartitionPlan],
    cfg: SearchlightConfig | None = None,
    n_jobs: int | None = None,
) -> SearchlightResult:
    """Run the searchlight over every masked voxel of ``dataset``.

    Returns a :class:`SearchlightResult` whose ``maps`` hold one
    :class:`ScoreMap` per method (target-domain accuracy) plus
    ``"baseline_source"`` (baseline accuracy on held-out source data).
    Results do not depend on ``n_jobs``: every sphere writes its own column.
    """
    cfg = cfg or SearchlightConfig()
    plans = list(plans)
    if not plans:
        raise InvalidArgumentError("no partition plans given")
    bad = {p.n_t for p in plans if p.n_t != cfg.n_t}
    if bad:
        raise InvalidArgumentError(f"plans have n_t {sorted(bad)}, config says {cfg.n_t}")
    t0 = time.perf_counter()
    mask = dataset.mask
    F = dataset.features
    y = np.asarray(dataset.trials.label)
    spheres = sphere_centers(mask, cfg.radius_mm)
    names = list(cfg.methods) + [SOURCE_MAP]
    out = {name: np.full((len(plans), len(spheres)), np.nan) for name in names}

    def work(cols):
        failures = []
        fits = 0
        for c in cols:
            fits += _sphere_scores(F[:, spheres[c].member_index], y, plans, cfg, out, c, failures)
        return fits, failures

    chunks = np.array_split(np.arange(len(spheres)), _workers(n_jobs))
    if len(chunks) > 1:
        with ThreadPoolExecutor(len(chunks)) as ex:
            results = list(ex.map(work, chunks))
    else:
        results = [work(chunks[0])]
    n_fits = sum(r[0] for r in results)
    failures = [f for r in results for f in r[1]]

    maps = {}
    n_nan = 0
    for name in names:
        means, nan_counts = order_invariant_mean(out[name])
        n_nan += int(nan_counts.sum())
        maps[name] = ScoreMap(
            mask, means, out[name] if cfg.keep_per_partition else None, nan_counts, name
        )
    return SearchlightResult(
        maps=maps,
        config=cfg,
        n_fits=n_fits,
        n_failures=len(failures),
        wall_time_s=time.perf_counter() - t0,
        failure_examples=tuple(failures[:20]),
    )


def write_searchlight(result: SearchlightResult, plans, out_dir, run_info: dict | None = None) -> Path:
    """Write score maps, per-partition maps, plans and a run manifest.

    Layout: ``maps/<name>/`` and ``per_partition/<name>/`` volume bundles,
    ``plans.txt`` and ``run.json``. Wall time goes to ``timing.json`` so the
    other files are byte-reproducible.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, smap in result.maps.items():
        meta = {"method": name, "nan_total": int(smap.nan_counts.sum())}
        write_volumes(out / "maps" / name, smap.mask, smap.values, meta)
        if smap.per_partition is not None:
            write_volumes(out / "per_partition" / name, smap.mask, smap.per_partition, meta)
    write_plans(out / "plans.txt", plans)
    manifest = {
        "kind": "searchlight",
        "config": result.config.to_dict(),
        "n_plans": len(plans),
        "plan_seeds": [str(p.seed) for p in plans],
        "n_fits": result.n_fits,
        "n_failures": result.n_failures,
        "nan_counts": {k: int(v.nan_counts.sum()) for k, v in result.maps.items()},
        **(run_info or {}),
    }
    (out / "run.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (out / "timing.json").write_text(json.dumps({"wall_time_s": result.wall_time_s}) + "\n")
    return out
