"""The repeated-partition method comparison.

For every plan of a plan grid, all requested methods are trained on the same
source-train and target-train rows and scored by balanced accuracy on the same
target-test rows. Cells whose fit or score fails hold NaN and are listed in a
flag file. Outputs::

    manifest.json          everything needed to replay the run
    plans/nt_<n_t>.txt     the partition plans per N_t
    tables/nt_<n_t>.csv    partitions x methods balanced accuracies
    tables/all.csv         all N_t tables stacked, with an n_t column
    flags.csv              failed cells (n_t, partition, method, error)
    ranks/                 aligned Friedman + Shaffer summary of all.csv
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .adaptation import ADAPTERS, METHODS, DomainPair, adapt
from .dataset import SubjectDataset, read_bundle
from .errors import InvalidArgumentError, XDecodeError
from .linear import FitConfig, balanced_accuracy
from .partitioning import PartitionPlan, PlanGrid, make_plan_grid, write_plans
from .stats.ranks import RankSummary, ResultsTable, rank_summary, write_rank_summary

NT_DEFAULT = tuple(range(10, 101, 10))


@dataclass(frozen=True)
class CompareConfig:
    methods: tuple = METHODS
    n_partitions: int = 100
    n_t_values: tuple = NT_DEFAULT
    base_seed: int = 0
    hyperparams: dict = field(default_factory=dict)
    fit: FitConfig = field(default_factory=FitConfig)
    alpha: float = 0.05

    def __post_init__(self):
        methods = tuple(self.methods)
        unknown = [m for m in methods if m not in ADAPTERS]
        if unknown:
            raise InvalidArgumentError(f"unknown method(s) {unknown}; expected among {', '.join(METHODS)}")
        if not methods or len(set(methods)) != len(methods):
            raise InvalidArgumentError("methods must be nonempty and distinct")
        extra = set(self.hyperparams) - set(methods)
        if extra:
            raise InvalidArgumentError(f"hyperparameters given for unused methods {sorted(extra)}")
        object.__setattr__(self, "methods", methods)
        object.__setattr__(self, "n_t_values", tuple(int(v) for v in self.n_t_values))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["methods"] = list(self.methods)
        d["n_t_values"] = list(self.n_t_values)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CompareConfig":
        d = dict(d)
        d["fit"] = FitConfig(**d.get("fit", {}))
        return cls(**d)


@dataclass(frozen=True, eq=False)
class CompareResult:
    config: CompareConfig
    tables: dict
    combined: ResultsTable
    summary: RankSummary | None
    flags: tuple
    plans: PlanGrid

    @property
    def n_cells(self) -> int:
        return sum(t.values.size for t in self.tables.values())

    @property
    def failure_rate(self) -> float:
        return len(self.flags) / self.n_cells if self.n_cells else 0.0


def evaluate_plan(dataset: SubjectDataset, plan: PartitionPlan, cfg: CompareConfig):
    """Balanced accuracy of every method on one plan.

    Returns ``(row, flags)`` where ``row`` holds one value per method (NaN on
    failure) and ``flags`` lists ``(method, message)`` pairs.
    """
    F = dataset.features
    y = np.asarray(dataset.trials.label)
    pair = DomainPair(F[plan.source_train], y[plan.source_train], F[plan.target_train], y[plan.target_train])
    X_test, y_test = F[plan.target_test], y[plan.target_test]
    row = np.full(len(cfg.methods), np.nan)
    flags = []
    baseline = None
    for j, method in enumerate(cfg.methods):
        hp = dict(cfg.hyperparams.get(method, {}))
        if method == "rtlc" and baseline is not None:
            # identical data and settings: reuse the source fit
            hp["source_model"] = baseline
        try:
            am = adapt(method, pair, cfg.fit, **hp)
            row[j] = balanced_accuracy(y_test, am.predict(X_test))
        except XDecodeError as exc:
            flags.append((method, f"{type(exc).__name__}: {exc}"))
            continue
        if method == "baseline":
            baseline = am.model
    return row, flags


def _workers(n_jobs):
    if n_jobs:
        return max(1, int(n_jobs))
    try:
        return max(1, int(os.environ.get("XDECODE_THREADS", "1")))
    except ValueError:
        return 1


def run_compare_experiment(
    dataset: SubjectDataset,
    cfg: CompareConfig | None = None,
    out_dir=None,
    n_jobs: int | None = None,
    bundle_path=None,
) -> CompareResult:
    """Run the comparison protocol and optionally write its outputs.

    Results are independent of ``n_jobs``: each plan's row is stored at the
    plan's own index.
    """
    cfg = cfg or CompareConfig()
    grid = make_plan_grid(dataset.trials, cfg.n_partitions, cfg.n_t_values, cfg.base_seed)
    jobs = [(j, i, plan) for i, row in enumerate(grid.plans) for j, plan in enumerate(row)]
    rows = np.full((len(cfg.n_t_values), cfg.n_partitions, len(cfg.methods)), np.nan)
    flag_lists = [None] * len(jobs)

    def work(k):
        j, i, plan = jobs[k]
        rows[j, i], flag_lists[k] = evaluate_plan(dataset, plan, cfg)

    workers = _workers(n_jobs)
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            list(ex.map(work, range(len(jobs))))
    else:
        for k in range(len(jobs)):
            work(k)

    flags = tuple(
        (cfg.n_t_values[j], i, method, msg)
        for (j, i, _), fl in zip(jobs, flag_lists)
        for method, msg in fl
    )
    tables = {n_t: ResultsTable(rows[j], cfg.methods) for j, n_t in enumerate(cfg.n_t_values)}
    combined = ResultsTable.concat(tables.values())
    complete = combined.complete_rows()
    summary = None
    if len(cfg.methods) >= 2 and complete.shape[0] >= 2:
        summary = rank_summary(combined, cfg.alpha)
    result = CompareResult(cfg, tables, combined, summary, flags, grid)
    if out_dir is not None:
        write_compare(result, out_dir, bundle_path)
    return result


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else repr(float(v))


def write_compare(result: CompareResult, out_dir, bundle_path=None) -> Path:
    out = Path(out_dir)
    (out / "tables").mkdir(parents=True, exist_ok=True)
    (out / "plans").mkdir(parents=True, exist_ok=True)
    cfg = result.config
    methods = list(cfg.methods)
    with open(out / "tables" / "all.csv", "w", newline="") as fall:
        wall = csv.writer(fall, lineterminator="\n")
        wall.writerow(["n_t", "partition", *methods])
        for j, (n_t, table) in enumerate(result.tables.items()):
            plans = result.plans.for_n_t(n_t)
            write_plans(out / "plans" / f"nt_{n_t}.txt", plans)
            with open(out / "tables" / f"nt_{n_t}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["partition", "seed", *methods])
                for i, (plan, row) in enumerate(zip(plans, table.values)):
                    cells = [_fmt(v) for v in row]
                    w.writerow([i, plan.seed, *cells])
                    wall.writerow([n_t, i, *cells])
    with open(out / "flags.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n_t", "partition", "method", "error"])
        w.writerows(result.flags)
    if result.summary is not None:
        write_rank_summary(result.summary, out / "ranks")
    manifest = {
        "kind": "compare",
        "config": cfg.to_dict(),
        "bundle": None if bundle_path is None else str(Path(bundle_path).resolve()),
        "n_cells": result.n_cells,
        "n_failed_cells": len(result.flags),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def replay_compare(manifest_path, out_dir, n_jobs: int | None = None) -> CompareResult:
    """Re-run a comparison from its ``manifest.json``."""
    manifest = json.loads(Path(manifest_path).read_text())
    if manifest.get("kind") != "compare":
        raise InvalidArgumentError(f"{manifest_path} is not a compare manifest")
    if not manifest.get("bundle"):
        raise InvalidArgumentError("manifest does not record a bundle path")
    cfg = CompareConfig.from_dict(manifest["config"])
    ds = read_bundle(manifest["bundle"])
    return run_compare_experiment(ds, cfg, out_dir, n_jobs, manifest["bundle"])


_INDEX_COLUMNS = ("n_t", "partition", "seed")


def read_table(path) -> ResultsTable:
    """Load a table written by :func:`write_compare` (index columns dropped)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidArgumentError(f"{path} is empty")
    header = rows[0]
    keep = [k for k, name in enumerate(header) if name not in _INDEX_COLUMNS]
    if len(keep) < 2:
        raise InvalidArgumentError(f"{path} has fewer than two method columns")
    try:
        values = np.array([[float(r[k]) for k in keep] for r in rows[1:]], dtype=float)
    except (ValueError, IndexError) as exc:
        raise InvalidArgumentError(f"{path}: malformed table ({exc})") from exc
    return ResultsTable(values.reshape(-1, len(keep)), [header[k] for k in keep])
