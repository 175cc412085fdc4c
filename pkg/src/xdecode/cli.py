"""Command-line interface.

Exit codes: 0 success, 2 invalid input, 3 fit failures above
``--max-failures`` (a fraction of attempted fits or table cells).
"""

from __future__ import annotations

import argparse
import glob
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from .adaptation import METHODS
from .dataset import inspect_bundle, read_bundle, read_volumes, write_volumes
from .errors import ConvergenceError, DegenerateDataError, DivergenceError, XDecodeError
from .experiment import CompareConfig, read_table, replay_compare, run_compare_experiment
from .linear import FitConfig
from .partitioning import make_plan_grid
from .searchlight import SearchlightConfig, run_searchlight, write_searchlight
from .stats.inference import per_subject_permutation_test, sign_flip_permutation_test
from .stats.ranks import ResultsTable, rank_summary, write_rank_summary
from .stats.tfce import TfceConfig
from .synth import SynthConfig, generate_synth, write_synth

EXIT_OK, EXIT_INVALID, EXIT_FAILURES = 0, 2, 3


class UsageError(Exception):
    """Invalid command-line input (exit code 2)."""


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _json_arg(text: str | None) -> dict:
    if not text:
        return {}
    path = Path(text)
    raw = path.read_text() if path.is_file() else text
    try:
        value = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise UsageError(f"invalid JSON in {text!r}: {exc}") from exc
    if not isinstance(value, dict):
        raise UsageError("hyperparameters must be a JSON object")
    return value


def _out(msg: str):
    print(msg, flush=True)


def _check_failures(rate: float, limit: float, what: str) -> int:
    if rate > limit:
        _out(f"error: {rate:.3%} of {what} failed, above --max-failures {limit:.3%}")
        return EXIT_FAILURES
    return EXIT_OK


# -- subcommands ------------------------------------------------------------


def cmd_synth(args) -> int:
    try:
        cfg_dict = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read synth config {args.config}: {exc}") from exc
    cfg = SynthConfig.from_dict(cfg_dict)
    result = generate_synth(cfg)
    write_synth(result, args.out)
    _out(
        f"wrote {result.dataset.n_samples} samples x {result.dataset.mask.n_included} features to {args.out}"
        f" (Bayes target accuracy {result.truth['bayes_accuracy_target']:.4f})"
    )
    return EXIT_OK


def cmd_compare(args) -> int:
    if args.replay:
        result = replay_compare(args.replay, args.out, args.jobs)
    else:
        if not args.bundle:
            raise UsageError("compare needs --bundle (or --replay)")
        cfg = CompareConfig(
            methods=tuple(args.methods),
            n_partitions=args.partitions,
            n_t_values=tuple(args.nt_list),
            base_seed=args.seed,
            hyperparams=_json_arg(args.hyperparams),
            fit=FitConfig(l2_strength=args.l2),
            alpha=args.alpha,
        )
        ds = read_bundle(args.bundle)
        result = run_compare_experiment(ds, cfg, args.out, args.jobs, args.bundle)
    means = np.nanmean(result.combined.values, axis=0) if result.combined.values.size else []
    for m, v in zip(result.combined.methods, means):
        rank = "" if result.summary is None else f"  avg rank {result.summary.rank_of(m):.2f}"
        _out(f"{m:12s} mean balanced accuracy {v:.4f}{rank}")
    if result.summary is not None:
        _out(f"aligned Friedman statistic {result.summary.statistic:.4f}, p = {result.summary.p_value:.3g}")
    _out(f"{len(result.flags)} of {result.n_cells} cells failed; outputs in {args.out}")
    return _check_failures(result.failure_rate, args.max_failures, "table cells")


def _searchlight_run(bundle, cfg: SearchlightConfig, seed: int, out, jobs):
    ds = read_bundle(bundle)
    plans = make_plan_grid(ds.trials, cfg.n_partitions, [cfg.n_t], seed).for_n_t(cfg.n_t)
    result = run_searchlight(ds, plans, cfg, jobs)
    info = {"bundle": str(Path(bundle).resolve()), "seed": int(seed)}
    write_searchlight(result, plans, out, info)
    return result


def cmd_searchlight(args) -> int:
    if args.replay:
        manifest = json.loads(Path(args.replay).read_text())
        if manifest.get("kind") != "searchlight":
            raise UsageError(f"{args.replay} is not a searchlight manifest")
        c = dict(manifest["config"])
        c["fit"] = FitConfig(**c["fit"])
        c["methods"] = tuple(c["methods"])
        cfg = SearchlightConfig(**c)
        result = _searchlight_run(manifest["bundle"], cfg, manifest["seed"], args.out, args.jobs)
    else:
        if not args.bundle:
            raise UsageError("searchlight needs --bundle (or --replay)")
        cfg = SearchlightConfig(
            radius_mm=args.radius_mm,
            methods=tuple(args.methods),
            n_partitions=args.partitions,
            n_t=args.nt,
            fit=FitConfig(l2_strength=args.l2),
            rtlc_lambda=args.rtlc_lambda,
        )
        result = _searchlight_run(args.bundle, cfg, args.seed, args.out, args.jobs)
    for name, smap in result.maps.items():
        _out(f"{name:16s} mean {np.nanmean(smap.values):.4f}  max {np.nanmax(smap.values):.4f}  NaN cells {int(smap.nan_counts.sum())}")
    _out(f"{result.n_failures} of {result.n_fits} fits failed; outputs in {args.out}")
    return _check_failures(result.failure_rate, args.max_failures, "fits")


def cmd_friedman(args) -> int:
    paths = sorted(glob.glob(args.tables))
    if not paths:
        raise UsageError(f"no tables match {args.tables!r}")
    table = ResultsTable.concat(read_table(p) for p in paths)
    dropped = table.shape[0] - table.complete_rows().shape[0]
    summary = rank_summary(table, args.alpha)
    write_rank_summary(summary, args.out)
    _out(f"{len(paths)} table(s), {summary.n_rows} complete rows ({dropped} with NaN dropped)")
    for m in sorted(summary.methods, key=summary.rank_of):
        _out(f"{m:12s} avg aligned rank {summary.rank_of(m):.3f}")
    _out(f"statistic {summary.statistic:.4f}, p = {summary.p_value:.3g}")
    for g in summary.groups:
        if len(g) > 1:
            _out("not significantly different: " + " ".join(g))
    return EXIT_OK


def cmd_permtest(args) -> int:
    paths = sorted(glob.glob(args.maps))
    if not paths:
        raise UsageError(f"no map bundles match {args.maps!r}")
    loaded = [read_volumes(p) for p in paths]
    mask = loaded[0][0]
    for m, _, _ in loaded[1:]:
        if m != mask:
            raise UsageError("map bundles have different masks")
    tfce = TfceConfig(args.tfce_E, args.tfce_H, args.tfce_steps, args.connectivity)
    if len(loaded) == 1 and loaded[0][1].shape[0] > 1:
        mode = "per-subject"
        maps = loaded[0][1] - args.chance
        res = per_subject_permutation_test(maps, mask, args.n_perm, tfce, args.seed, n_jobs=args.jobs)
    else:
        mode = "group"
        if any(v.shape[0] != 1 for _, v, _ in loaded):
            raise UsageError("group test expects one map per bundle")
        maps = np.vstack([v for _, v, _ in loaded]) - args.chance
        res = sign_flip_permutation_test(maps, mask, args.n_perm, args.sigma_mm, tfce, args.seed, args.jobs)
    out = Path(args.out)
    meta = {"mode": mode, "n_permutations": res.n_permutations, "seed": res.seed, "sigma_mm": res.sigma_mm}
    write_volumes(out / "p", mask, res.p, meta)
    write_volumes(out / "tfce", mask, res.statistic, meta)
    sig = res.significant(args.alpha)
    summary = {
        **meta,
        "inputs": paths,
        "n_observations": int(maps.shape[0]),
        "n_evaluated": res.n_evaluated,
        "exhaustive": res.exhaustive,
        "alpha": args.alpha,
        "n_significant": int(sig.sum()),
        "min_p": res.min_p,
        "zero_variance_voxels": int(res.flags.sum()) if res.flags is not None else 0,
        "chance": args.chance,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    _out(f"{mode} test on {maps.shape[0]} maps: {int(sig.sum())} of {mask.n_included} voxels with p < {args.alpha} (min p {res.min_p:.4g})")
    return EXIT_OK


def cmd_inspect(args) -> int:
    _out(json.dumps(inspect_bundle(args.bundle), indent=2))
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xdecode", description="Cross-domain decoding with domain adaptation.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, failures=False):
        sp.add_argument("--jobs", type=int, default=None, help="worker threads (default: XDECODE_THREADS or 1)")
        if failures:
            sp.add_argument("--max-failures", type=float, default=0.05, help="tolerated failure fraction")

    s = sub.add_parser("synth", help="generate a synthetic bundle")
    s.add_argument("--config", required=True, help="JSON synth configuration")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    c = sub.add_parser("compare", help="run the method comparison")
    c.add_argument("--bundle")
    c.add_argument("--methods", type=_str_list, default=list(METHODS))
    c.add_argument("--partitions", type=int, default=100)
    c.add_argument("--nt-list", type=_int_list, default=list(range(10, 101, 10)))
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--l2", type=float, default=1.0, help="L2 strength of every logistic fit")
    c.add_argument("--hyperparams", help="JSON object or file: {method: {name: value}}")
    c.add_argument("--alpha", type=float, default=0.05)
    c.add_argument("--replay", help="manifest.json of an earlier run")
    c.add_argument("--out", required=True)
    common(c, failures=True)
    c.set_defaults(func=cmd_compare)

    sl = sub.add_parser("searchlight", help="run the sphere searchlight")
    sl.add_argument("--bundle")
    sl.add_argument("--radius-mm", type=float, default=12.0)
    sl.add_argument("--methods", type=_str_list, default=["baseline", "naive", "rtlc"])
    sl.add_argument("--partitions", type=int, default=100)
    sl.add_argument("--nt", type=int, default=100)
    sl.add_argument("--seed", type=int, default=0)
    sl.add_argument("--l2", type=float, default=1.0)
    sl.add_argument("--rtlc-lambda", type=float, default=1.0)
    sl.add_argument("--replay", help="run.json of an earlier run")
    sl.add_argument("--out", required=True)
    common(sl, failures=True)
    sl.set_defaults(func=cmd_searchlight)

    f = sub.add_parser("friedman", help="aligned Friedman test with Shaffer post-hoc")
    f.add_argument("--tables", required=True, help="glob of CSV tables")
    f.add_argument("--alpha", type=float, default=0.05)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_friedman)

    pt = sub.add_parser("permtest", help="sign-flip permutation test with TFCE")
    pt.add_argument("--maps", required=True, help="glob of volume bundles")
    pt.add_argument("--n-perm", type=int, default=10000)
    pt.add_argument("--sigma-mm", type=float, default=6.0)
    pt.add_argument("--tfce-E", type=float, default=0.5)
    pt.add_argument("--tfce-H", type=float, default=2.0)
    pt.add_argument("--tfce-steps", type=int, default=100)
    pt.add_argument("--connectivity", type=int, default=26, choices=(6, 18, 26))
    pt.add_argument("--alpha", type=float, default=0.05)
    pt.add_argument("--chance", type=float, default=0.5, help="subtracted from the maps first (0 if already centered)")
    pt.add_argument("--seed", type=int, default=0)
    pt.add_argument("--out", required=True)
    common(pt)
    pt.set_defaults(func=cmd_permtest)

    i = sub.add_parser("inspect", help="validate a bundle and print its summary")
    i.add_argument("--bundle", required=True)
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return args.func(args)
    except (ConvergenceError, DivergenceError, DegenerateDataError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURES
    except (UsageError, XDecodeError, OSError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
