import json

import numpy as np
import pytest

from xdecode.dataset import SubjectDataset, read_volumes
from xdecode.errors import InvalidArgumentError
from xdecode.linear import balanced_accuracy, fit_logistic, predict
from xdecode.partitioning import make_plan_grid
from xdecode.searchlight import (
    SearchlightConfig,
    center_scores,
    order_invariant_mean,
    run_searchlight,
    write_searchlight,
)
from xdecode.synth import SynthConfig, generate_synth
from xdecode.volume import BrainMask, sphere_centers

DIMS = (5, 5, 5)
CENTER = int(np.ravel_multi_index((2, 2, 2), DIMS))


def dataset(sep, seed=0):
    cfg = SynthConfig(
        grid_dims=DIMS, n_source=80, n_target=60, class_separation=sep, informative=(CENTER,), seed=seed
    )
    return generate_synth(cfg).dataset


def plans_for(ds, n=4, n_t=20, seed=1):
    return make_plan_grid(ds.trials, n, (n_t,), seed).for_n_t(n_t)


def run(ds, plans, **kw):
    cfg = SearchlightConfig(radius_mm=3.0, n_partitions=len(plans), n_t=plans[0].n_t, **kw)
    return run_searchlight(ds, plans, cfg)


@pytest.fixture(scope="module")
def signal_run():
    ds = dataset(4.0)
    plans = plans_for(ds)
    return ds, plans, run(ds, plans)


def test_planted_voxel_peaks(signal_run):
    ds, _, res = signal_run
    vol = center_scores(res.maps["baseline"]).volume()
    # every sphere holding the planted voxel carries the signal
    peak = np.array(np.unravel_index(np.nanargmax(vol), DIMS))
    assert np.linalg.norm(peak - (2, 2, 2)) <= 1.0
    assert vol[2, 2, 2] > 0.3
    assert res.maps["baseline_source"].values[CENTER] > 0.9
    assert set(res.maps) == {"baseline", "naive", "rtlc", "baseline_source"}


def test_noise_is_near_chance():
    ds = dataset(0.0, seed=2)
    res = run(ds, plans_for(ds, n=3), methods=("baseline",))
    assert abs(np.nanmean(res.maps["baseline"].values) - 0.5) < 0.05


def test_voxel_value_matches_direct_sphere_fit(signal_run):
    ds, plans, res = signal_run
    sphere = sphere_centers(ds.mask, 3.0)[CENTER]
    F = ds.features[:, sphere.member_index]
    y = ds.trials.label
    accs = []
    for p in plans:
        m = fit_logistic(F[p.source_train], y[p.source_train])
        accs.append(balanced_accuracy(y[p.target_test], predict(m, F[p.target_test])[1]))
    np.testing.assert_allclose(res.maps["baseline"].per_partition[:, CENTER], accs)
    assert res.maps["baseline"].values[CENTER] == pytest.approx(np.mean(accs))


def test_sphere_result_independent_of_other_voxels(signal_run):
    ds, plans, res = signal_run
    inc = np.zeros(DIMS, bool)
    members = sphere_centers(ds.mask, 3.0)[CENTER].members
    inc[tuple(members.T)] = True
    sub = SubjectDataset(BrainMask(ds.grid, inc), ds.samples, ds.trials)
    sub_res = run(sub, plans)
    k = int(sub.mask.index_volume()[2, 2, 2])
    for name in ("baseline", "naive", "rtlc"):
        assert sub_res.maps[name].values[k] == res.maps[name].values[CENTER]


def test_baseline_ignores_target_train(signal_run):
    ds, plans, res = signal_run
    other = [type(p)(p.seed, p.n_t, p.source_train, p.source_test, p.target_train[:0], p.target_test) for p in plans]
    cfg = SearchlightConfig(radius_mm=3.0, methods=("baseline",), n_partitions=4, n_t=20)
    bad = {p.n_t for p in other}
    assert bad == {20}
    res2 = run_searchlight(ds, other, cfg)
    np.testing.assert_array_equal(res2.maps["baseline"].values, res.maps["baseline"].values)


def test_plan_order_does_not_change_maps(signal_run):
    ds, plans, res = signal_run
    res2 = run(ds, plans[::-1])
    for name in res.maps:
        assert res2.maps[name].values.tobytes() == res.maps[name].values.tobytes()
    res3 = run_searchlight(ds, plans, res.config, n_jobs=3)
    for name in res.maps:
        assert res3.maps[name].values.tobytes() == res.maps[name].values.tobytes()


def test_single_voxel_mask():
    ds = dataset(3.0)
    inc = np.zeros(DIMS, bool)
    inc[2, 2, 2] = True
    one = SubjectDataset(BrainMask(ds.grid, inc), ds.samples, ds.trials)
    res = run(one, plans_for(one, n=2), methods=("baseline",))
    assert res.maps["baseline"].values.shape == (1,)
    assert res.maps["baseline"].values[0] > 0.8


def test_center_scores_is_not_idempotent(signal_run):
    m = signal_run[2].maps["naive"]
    c = center_scores(m)
    np.testing.assert_allclose(c.values, m.values - 0.5)
    cc = center_scores(c)
    assert cc.shift == 1.0
    np.testing.assert_allclose(cc.values + cc.shift, m.values)


def test_order_invariant_mean_handles_nan():
    x = np.array([[0.5, np.nan], [0.7, np.nan], [0.6, 0.9]])
    means, nan = order_invariant_mean(x)
    np.testing.assert_allclose(means, [0.6, 0.9])
    assert nan.tolist() == [0, 2]
    means, _ = order_invariant_mean(np.full((2, 1), np.nan))
    assert np.isnan(means[0])


def test_degenerate_spheres_become_counted_nan():
    ds = dataset(3.0)
    samples = ds.samples.copy()
    samples[:, 0, 0, 0] = np.nan  # non-finite voxel breaks every fit touching it
    broken = SubjectDataset(ds.mask, np.nan_to_num(samples, nan=np.inf), ds.trials)
    res = run(broken, plans_for(ds, n=2), methods=("baseline",))
    corner = res.maps["baseline"]
    assert np.isnan(corner.values[0])
    assert corner.nan_counts[0] == 2
    assert res.n_failures > 0
    assert not np.isnan(corner.values[CENTER])


def test_config_validation(signal_run):
    with pytest.raises(InvalidArgumentError):
        SearchlightConfig(methods=("kmm",))
    with pytest.raises(InvalidArgumentError):
        SearchlightConfig(radius_mm=0)
    assert SearchlightConfig(methods=("rtlc", "baseline")).methods == ("baseline", "rtlc")
    ds, plans, _ = signal_run
    with pytest.raises(InvalidArgumentError):
        run_searchlight(ds, plans, SearchlightConfig(n_t=30))


def test_written_outputs(tmp_path, signal_run):
    ds, plans, res = signal_run
    write_searchlight(res, plans, tmp_path, {"seed": 1})
    run_json = json.loads((tmp_path / "run.json").read_text())
    assert run_json["kind"] == "searchlight" and run_json["seed"] == 1
    mask, values, meta = read_volumes(tmp_path / "maps" / "rtlc")
    assert meta["method"] == "rtlc"
    np.testing.assert_array_equal(values[0], res.maps["rtlc"].values.astype(np.float32))
    _, pp, _ = read_volumes(tmp_path / "per_partition" / "baseline")
    assert pp.shape == (4, ds.mask.n_included)
    assert (tmp_path / "timing.json").exists()
