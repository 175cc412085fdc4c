"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line (shown in the terminal summary) and then
asserts, so a failing criterion also fails the run.
"""

import csv
import json
import math
import time

import numpy as np
import pytest

from acceptance_log import record
from oracles import (
    FRIEDMAN_FIXTURE,
    brute_force_offsets,
    kmm_grid_search,
    manual_aligned_friedman,
    ridge_towards_oracle,
)
from xdecode.adaptation import (
    DomainPair,
    adapt_rtlc,
    adapt_rulsif,
    adapt_ulsif,
    kmm_objective,
    kmm_problem,
    kmm_weights,
    rtlc_solve,
)
from xdecode.cli import main
from xdecode.kernels import median_heuristic
from xdecode.linear import FitConfig, fit_logistic, penalized_gradient, penalized_loss
from xdecode.partitioning import make_plan_grid
from xdecode.searchlight import SearchlightConfig, center_scores, run_searchlight
from xdecode.stats.inference import per_subject_permutation_test, sign_flip_permutation_test
from xdecode.stats.ranks import bonferroni_posthoc, friedman_aligned_ranks, shaffer_adjust, shaffer_posthoc
from xdecode.stats.tfce import TfceConfig, TfceOperator, tfce_enhance
from xdecode.synth import SynthConfig, generate_synth
from xdecode.volume import BrainMask, VoxelGrid, sphere_offsets

pytestmark = pytest.mark.acceptance


def test_01_geometry():
    t0 = time.perf_counter()
    off = sphere_offsets(12.0, (3.0, 3.0, 3.0))
    same = {tuple(o) for o in off} == brute_force_offsets(12.0, (3.0, 3.0, 3.0))
    ok = len(off) == 257 and same
    assert record(1, "Geometry", ok, f"{len(off)} offsets, equal to brute force: {same}", time.perf_counter() - t0, 1)


def test_02_logistic_optimality():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst_grad, worst_fd = 0.0, 0.0
    for _ in range(50):
        n, d = rng.integers(5, 40), rng.integers(1, 30)
        X = rng.standard_normal((n, d)) * rng.uniform(0.2, 3)
        y = rng.integers(0, 2, n)
        y[:2] = [0, 1]
        w = rng.uniform(0.1, 3, n)
        l2 = rng.uniform(0.05, 5)
        m = fit_logistic(X, y, w, FitConfig(l2_strength=l2, tol=1e-6))
        gb, gi = penalized_gradient(m.beta, m.intercept, X, y, w, l2)
        worst_grad = max(worst_grad, np.abs(gb).max(), abs(gi))
        # analytic gradient against central differences at a random point
        beta, b = rng.standard_normal(d), rng.standard_normal()
        gb, gi = penalized_gradient(beta, b, X, y, w, l2)
        g = np.append(gb, gi)
        h = 1e-6
        fd = np.empty(d + 1)
        for j in range(d + 1):
            e = np.zeros(d + 1)
            e[j] = h
            plus = penalized_loss(beta + e[:d], b + e[d], X, y, w, l2)
            minus = penalized_loss(beta - e[:d], b - e[d], X, y, w, l2)
            fd[j] = (plus - minus) / (2 * h)
        worst_fd = max(worst_fd, np.linalg.norm(fd - g) / max(np.linalg.norm(g), 1e-12))
    ok = worst_grad <= 1e-6 and worst_fd <= 1e-4
    detail = f"max ||grad||_inf {worst_grad:.2e} (<= 1e-6), max FD rel. error {worst_fd:.2e} (<= 1e-4)"
    assert record(2, "Logistic optimality", ok, detail, time.perf_counter() - t0, 10)


def test_03_rtlc():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    for i in range(20):
        n, p = (int(rng.integers(3, 30)), int(rng.integers(2, 30)))
        A = rng.standard_normal((n, p))
        y = rng.choice([-1.0, 1.0], n)
        b0 = rng.standard_normal(p)
        lam = 10 ** rng.uniform(-2, 3)
        worst = max(worst, np.abs(rtlc_solve(A, y, b0, lam) - ridge_towards_oracle(A, y, b0, lam)).max())
    Xs = rng.standard_normal((80, 10))
    ys = (Xs[:, 0] > 0).astype(int)
    Xt = rng.standard_normal((12, 10))
    yt = (Xt[:, 1] > 0).astype(int)
    yt[:2] = [0, 1]
    pair = DomainPair(Xs, ys, Xt, yt)
    src = fit_logistic(Xs, ys)
    src_p = np.append(src.beta, src.intercept)
    dists = []
    for lam in (0.01, 0.1, 1, 10, 100, 1e4):
        m = adapt_rtlc(pair, lam, source_model=src).model
        dists.append(np.linalg.norm(np.append(m.beta, m.intercept) - src_p))
    monotone = all(a >= b for a, b in zip(dists, dists[1:]))
    m = adapt_rtlc(pair, 1e9, source_model=src).model
    far = np.linalg.norm(np.append(m.beta, m.intercept) - src_p)
    ok = worst <= 1e-8 and monotone and far < 1e-5
    detail = f"max oracle gap {worst:.1e} (<= 1e-8), distance nonincreasing: {monotone}, lambda=1e9 distance {far:.1e} (< 1e-5)"
    assert record(3, "RTLC", ok, detail, time.perf_counter() - t0, 5)


def test_04_kmm():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    worst_excess = -np.inf
    for _ in range(20):
        n_s, n_t = int(rng.integers(10, 51)), int(rng.integers(10, 51))
        d = int(rng.integers(1, 4))
        Xs = rng.standard_normal((n_s, d))
        Xt = rng.standard_normal((n_t, d)) * rng.uniform(0.5, 1.5) + rng.uniform(-1.5, 1.5, d)
        bw = median_heuristic(Xs, Xt)
        K, kappa = kmm_problem(Xs, Xt, bw)
        w = kmm_weights(Xs, Xt, bw)
        worst_excess = max(worst_excess, kmm_objective(w, K, kappa) - kmm_objective(np.ones(n_s), K, kappa))
    worst_gap = 0.0
    for _ in range(5):
        Xs = rng.standard_normal((3, 2))
        Xt = rng.standard_normal((3, 2)) + 0.8
        B, eps = 3.0, 0.5
        K, kappa = kmm_problem(Xs, Xt, 1.0)
        w = kmm_weights(Xs, Xt, 1.0, B=B, eps=eps)
        worst_gap = max(worst_gap, abs(kmm_objective(w, K, kappa) - kmm_grid_search(Xs, Xt, 1.0, B, eps)))
    ok = worst_excess <= 1e-6 and worst_gap <= 1e-3
    detail = f"max objective excess over w=1 {worst_excess:.1e} (<= 1e-6), grid-search gap {worst_gap:.1e} (<= 1e-3)"
    assert record(4, "KMM", ok, detail, time.perf_counter() - t0, 30)


def test_05_ulsif_rulsif():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst_eq, min_w = 0.0, np.inf
    for _ in range(10):
        Xs = rng.standard_normal((60, 3))
        Xt = rng.standard_normal((40, 3)) + rng.uniform(-1, 1, 3)
        pair = DomainPair(Xs, (Xs[:, 0] > 0).astype(int), Xt)
        a, b = adapt_ulsif(pair), adapt_rulsif(pair, alpha=0.0)
        worst_eq = max(worst_eq, np.abs(a.weights.w - b.weights.w).max(), np.abs(a.diagnostics["theta"] - b.diagnostics["theta"]).max())
        min_w = min(min_w, a.weights.w.min(), adapt_rulsif(pair, alpha=0.5).weights.w.min())
    X = rng.standard_normal((400, 3))
    same = DomainPair(X[:200], (X[:200, 0] > 0).astype(int), X[200:])
    mean_w = adapt_ulsif(same).weights.w.mean()
    ok = worst_eq <= 1e-10 and abs(mean_w - 1) <= 0.1 and min_w >= 0
    detail = f"alpha=0 gap {worst_eq:.1e} (<= 1e-10), identical-domain mean weight {mean_w:.3f} (1 +- 0.1), min weight {min_w:.3g} (>= 0)"
    assert record(5, "ULSIF/RULSIF", ok, detail, time.perf_counter() - t0, 10)


def test_06_friedman_shaffer():
    t0 = time.perf_counter()
    stat, p, avg = friedman_aligned_ranks(FRIEDMAN_FIXTURE)
    ref_stat, ref_p, ref_avg = manual_aligned_friedman(FRIEDMAN_FIXTURE.tolist())
    gap = max(abs(stat - ref_stat), abs(p - ref_p), np.abs(avg - np.asarray(ref_avg)).max())
    p_ident = friedman_aligned_ranks(np.repeat(FRIEDMAN_FIXTURE[:, :1], 3, axis=1))[1]
    rng = np.random.default_rng(6)
    dominated = True
    for _ in range(100):
        k = int(rng.integers(3, 8))
        m = k * (k - 1) // 2
        raw = rng.uniform(0, 1, m) ** 3
        dominated &= bool(np.all(shaffer_adjust(raw) <= np.minimum(raw * m, 1.0) + 1e-15))
        r = rng.uniform(1, k, k)
        dominated &= bool(np.all(shaffer_posthoc(r, 20) <= bonferroni_posthoc(r, 20) + 1e-15))
    rejections = 0
    for _ in range(500):
        X = np.clip(rng.uniform(0.3, 0.9, (30, 5)) + rng.normal(0, 0.05, (30, 1)), 0, 1)
        rejections += friedman_aligned_ranks(X)[1] < 0.05
    rate = rejections / 500
    ok = gap <= 1e-6 and p_ident == 1.0 and dominated and 0.02 <= rate <= 0.08
    detail = (f"fixture gap {gap:.1e} (<= 1e-6), identical columns p = {p_ident}, Shaffer <= Bonferroni: {dominated}, "
              f"null rejection rate {rate:.3f} (in [0.02, 0.08])")
    assert record(6, "Aligned Friedman + Shaffer", ok, detail, time.perf_counter() - t0, 120)


def test_07_tfce():
    t0 = time.perf_counter()
    vol = np.zeros((5, 5, 5))
    vol[2, 2, 2] = 1.7
    dh = 1.7 / 100
    expect = sum((i * dh) ** 2 * dh for i in range(1, 101))
    gap = abs(tfce_enhance(vol)[2, 2, 2] - expect)
    zero = not np.any(tfce_enhance(np.zeros((6, 6, 6))))
    rng = np.random.default_rng(7)
    op = TfceOperator(BrainMask.full(VoxelGrid((6, 6, 6))), TfceConfig())
    monotone = True
    for _ in range(50):
        v = rng.standard_normal(216)
        c = rng.uniform(1.01, 4.0)
        monotone &= bool(np.all(np.abs(op(c * v)) >= np.abs(op(v)) - 1e-12))
    ok = gap <= 1e-9 and zero and monotone
    detail = f"power-sum gap {gap:.1e} (<= 1e-9), zero map stays zero: {zero}, scale monotone on 50 maps: {monotone}"
    assert record(7, "TFCE", ok, detail, time.perf_counter() - t0, 10)


def test_08_permutation_calibration():
    t0 = time.perf_counter()
    mask = BrainMask.full(VoxelGrid((8, 8, 8)))
    rng = np.random.default_rng(8)
    fwe = 0
    for r in range(200):
        maps = rng.standard_normal((12, mask.n_included))
        res = sign_flip_permutation_test(maps, mask, n_perm=500, sigma_mm=6.0, seed=1000 + r)
        fwe += bool(res.significant(0.05).any())
    rate = fwe / 200
    strong = 0.5 + 0.05 * rng.standard_normal((12, mask.n_included))
    min_p = sign_flip_permutation_test(strong, mask, n_perm=500, seed=1).min_p
    ok = 0.01 <= rate <= 0.10 and math.isclose(min_p, 1 / 501)
    detail = f"null FWE rejection rate {rate:.3f} over 200 replicates (in [0.01, 0.10]), strong-signal min p {min_p:.6f} (1/501 = {1 / 501:.6f})"
    assert record(8, "Permutation calibration", ok, detail, time.perf_counter() - t0, 600)


def test_09_end_to_end_comparison(tmp_path):
    t0 = time.perf_counter()
    s = 0.03  # voxel-signal scale
    synth = {
        "n_features": 200,
        "n_source": 400,
        "n_target": 300,
        "trial_length": 5,
        "class_separation": 3 * s,
        "noise_std": s,
        "mean_offset": 1.2 * s,
        "informative": list(range(100)),
        "rotation_deg": 30,
        "seed": 7,
    }
    (tmp_path / "synth.json").write_text(json.dumps(synth))
    assert main(["synth", "--config", str(tmp_path / "synth.json"), "--out", str(tmp_path / "bundle")]) == 0
    code = main(["compare", "--bundle", str(tmp_path / "bundle"), "--partitions", "20", "--nt-list", "100",
                 "--seed", "7", "--out", str(tmp_path / "out")])
    bayes = json.loads((tmp_path / "bundle" / "truth.json").read_text())["bayes_accuracy_target"]
    with open(tmp_path / "out" / "tables" / "nt_100.csv") as fh:
        rows = list(csv.DictReader(fh))
    mean = {m: np.mean([float(r[m]) for r in rows]) for m in rows[0] if m not in ("partition", "seed")}
    with open(tmp_path / "out" / "ranks" / "ranks.csv") as fh:
        ranks = {r["method"]: float(r["avg_rank"]) for r in csv.DictReader(fh) if not r["method"].startswith("#")}
    best = min(ranks, key=ranks.get)
    gain = mean["rtlc"] - mean["baseline"]
    shifted = mean["baseline"] <= bayes - 0.15
    ok = code == 0 and len(mean) == 13 and shifted and gain >= 0.05 and best == "rtlc"
    detail = (f"Bayes {bayes:.3f}, baseline {mean['baseline']:.3f} (<= Bayes - 0.15: {shifted}), rtlc {mean['rtlc']:.3f}, "
              f"gain {gain:+.3f} (>= 0.05), best by avg aligned rank: {best}")
    assert record(9, "End-to-end comparison", ok, detail, time.perf_counter() - t0, 300)


def test_10_searchlight():
    t0 = time.perf_counter()
    dims = (12, 12, 12)
    cluster = [(6, 6, 6), (6, 6, 7), (6, 7, 6)]
    info = [int(np.ravel_multi_index(c, dims)) for c in cluster]

    def run(sep):
        cfg = SynthConfig(grid_dims=dims, n_source=200, n_target=120, trial_length=5, class_separation=sep,
                          informative=info, seed=1)
        ds = generate_synth(cfg).dataset
        plans = make_plan_grid(ds.trials, 20, [40], base_seed=3).for_n_t(40)
        sl = SearchlightConfig(radius_mm=6.0, n_partitions=20, n_t=40)
        return ds, run_searchlight(ds, plans, sl)

    ds, res = run(3.0)
    base = center_scores(res.maps["baseline"])
    peak = np.array(np.unravel_index(np.nanargmax(base.volume()), dims))
    peak_dist = min(np.abs(peak - np.array(c)).max() for c in cluster)

    _, noise = run(0.0)
    grand = float(np.nanmean(noise.maps["baseline"].values))

    pv = per_subject_permutation_test(base.per_partition, ds.mask, n_perm=1000, seed=0)
    sig = np.zeros(dims, bool)
    sig[ds.mask.included] = pv.significant(0.05)
    allowed = np.zeros(dims, bool)
    for c in cluster:
        for o in sphere_offsets(6.0, (3.0, 3.0, 3.0)):
            q = np.array(c) + o
            if np.all((q >= 0) & (q < 12)):
                allowed[tuple(q)] = True
    stray = int((sig & ~allowed).sum())
    ok = peak_dist <= 1 and abs(grand - 0.5) <= 0.02 and sig.any() and stray == 0
    detail = (f"peak {tuple(int(v) for v in peak)} at {peak_dist} voxel(s) from the cluster (<= 1), noise grand mean "
              f"{grand:.4f} (0.5 +- 0.02), {int(sig.sum())} significant voxels, {stray} outside the dilated cluster")
    assert record(10, "Searchlight", ok, detail, time.perf_counter() - t0, 600)


def _tree_bytes(root, pattern):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.glob(pattern)) if p.is_file()}


def test_11_reproducibility(tmp_path, monkeypatch):
    t0 = time.perf_counter()
    cfg = {"grid_dims": [6, 6, 5], "n_source": 100, "n_target": 80, "informative": [95, 96], "class_separation": 2.0,
           "rotation_deg": 20, "seed": 11}
    (tmp_path / "synth.json").write_text(json.dumps(cfg))
    assert main(["synth", "--config", str(tmp_path / "synth.json"), "--out", str(tmp_path / "bundle")]) == 0

    monkeypatch.setenv("XDECODE_THREADS", "1")
    assert main(["compare", "--bundle", str(tmp_path / "bundle"), "--partitions", "4", "--nt-list", "10,30",
                 "--seed", "5", "--out", str(tmp_path / "c1")]) == 0
    assert main(["searchlight", "--bundle", str(tmp_path / "bundle"), "--radius-mm", "6", "--partitions", "4",
                 "--nt", "20", "--seed", "5", "--out", str(tmp_path / "s1")]) == 0
    monkeypatch.setenv("XDECODE_THREADS", "4")
    assert main(["compare", "--replay", str(tmp_path / "c1" / "manifest.json"), "--out", str(tmp_path / "c2")]) == 0
    assert main(["searchlight", "--replay", str(tmp_path / "s1" / "run.json"), "--out", str(tmp_path / "s2"),
                 "--jobs", "3"]) == 0

    c1, c2 = _tree_bytes(tmp_path / "c1", "**/*.csv"), _tree_bytes(tmp_path / "c2", "**/*.csv")
    s1 = _tree_bytes(tmp_path / "s1", "*/*/*")
    s2 = _tree_bytes(tmp_path / "s2", "*/*/*")
    s1["run.json"] = (tmp_path / "s1" / "run.json").read_bytes()
    s2["run.json"] = (tmp_path / "s2" / "run.json").read_bytes()
    same_c = bool(c1) and c1 == c2
    same_s = any(k.endswith(".f32") for k in s1) and s1 == s2
    ok = same_c and same_s
    detail = (f"compare replay with 4 threads: {len(c1)} CSV files byte-identical: {same_c}; searchlight replay with "
              f"3 workers: {len(s1)} map files byte-identical: {same_s}")
    assert record(11, "Reproducibility", ok, detail, time.perf_counter() - t0, 300)
