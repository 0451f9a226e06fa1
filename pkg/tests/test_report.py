import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lre_prune.amc import AMCConfig, run_schedule
from lre_prune.data import make_blobs
from lre_prune.errors import DataFormatError
from lre_prune.network import TrainConfig, build_network, count_params, train
from lre_prune.report import (
    build_report,
    check_report,
    cluster_separation,
    dumps_report,
    load_report,
    pca_2d,
    perturbation_csv,
    project,
    steps_jsonl,
    write_report,
)


def eig_oracle(X):
    Xc = X - X.mean(axis=0)
    vals, vecs = np.linalg.eigh(Xc.T @ Xc / (len(X) - 1))
    order = np.argsort(vals)[::-1][:2]
    return Xc @ vecs[:, order], vals[order]


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 6), st.integers(0, 2**31 - 1))
def test_pca_matches_eigendecomposition(d, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(60, d)) @ np.diag(np.arange(d, 0, -1) ** 1.5) + 3.0
    coords, var = pca_2d(X)
    ref, ref_var = eig_oracle(X)
    np.testing.assert_allclose(var, ref_var, rtol=1e-8)
    for i in range(2):
        sign = np.sign(coords[:, i] @ ref[:, i])
        np.testing.assert_allclose(coords[:, i], sign * ref[:, i], atol=1e-8)
    np.testing.assert_allclose(coords.mean(axis=0), 0, atol=1e-8)
    assert var[0] >= var[1]


def test_axis_aligned_2d_is_rotation_of_centered_data():
    rng = np.random.default_rng(0)
    X = np.column_stack([3 * rng.normal(size=100), rng.normal(size=100)]) + [5, -2]
    coords, _ = pca_2d(X)
    Xc = X - X.mean(axis=0)
    R = np.linalg.lstsq(Xc, coords, rcond=None)[0]
    np.testing.assert_allclose(R.T @ R, np.eye(2), atol=1e-10)
    np.testing.assert_allclose(Xc @ R, coords, atol=1e-10)


def test_rank_one_second_variance_vanishes():
    t = np.random.default_rng(1).normal(size=(50, 1))
    coords, var = pca_2d(t @ np.array([[1.0, 2.0, -1.0]]))
    assert var[1] < 1e-20 * var[0] + 1e-25
    _, var1 = pca_2d(t)
    assert var1[1] == 0.0


def test_cluster_separation_values():
    coords = np.array([[0.0, 0.0], [2.0, 0.0], [10.0, 0.0], [12.0, 0.0]])
    gap, spread = cluster_separation(coords, np.array([0, 0, 1, 1]))
    assert gap == pytest.approx(10.0) and spread == pytest.approx(1.0)


@pytest.fixture(scope="module")
def schedule_result():
    data = make_blobs(3, 10, 120, seed=2, separation=6.0).with_splits(heldout=0.25, test=0.2, seed=0)
    arch = [{"kind": "dense", "out": 20}, {"kind": "relu"}, {"kind": "dense", "out": 20}, {"kind": "relu"}, {"kind": "dense"}]
    net = train(build_network(arch, (10,), 3, seed=1), data.train, TrainConfig(max_epochs=15))
    cfg = AMCConfig(epsilon=0.05, learning_rate=0.02, finetune_max_epochs=5)
    return net, data, cfg, run_schedule(net, data, cfg)


def test_report_is_self_consistent(schedule_result, tmp_path):
    net, _, cfg, res = schedule_result
    report = build_report(res, {"epsilon": cfg.epsilon}, seed=0)
    total, dense, conv = count_params(net)
    assert report["baseline"]["params"] == {"total": total, "dense": dense, "conv": conv}
    check_report(report)
    write_report(report, tmp_path / "r.json")
    loaded = load_report(tmp_path / "r.json")
    assert loaded["summary"] == report["summary"]
    assert dumps_report(loaded) == (tmp_path / "r.json").read_text()
    lines = steps_jsonl(report).splitlines()
    assert len(lines) == len(res.records) and json.loads(lines[0])["step"] == 0
    csv_lines = perturbation_csv(report).splitlines()
    assert csv_lines[0] == "step,layer,adjusted,unadjusted" and len(csv_lines) == len(res.records) + 1


def test_tampered_report_rejected(schedule_result):
    _, _, _, res = schedule_result
    report = build_report(res, {}, seed=0)
    bad = json.loads(json.dumps(report))
    bad["summary"]["delta_total_pct"] += 1.0
    with pytest.raises(DataFormatError):
        check_report(bad)
    bad = json.loads(json.dumps(report))
    bad["final"]["params"]["total"] += 1
    with pytest.raises(DataFormatError):
        check_report(bad)


def test_clusters_stay_separated_after_compression(schedule_result):
    net, data, _, res = schedule_result
    for model in (net, res.network):
        k = model.prunable_indices()[-1]
        proj = project(model, data.test, k)
        gap, spread = cluster_separation(proj.coords, proj.labels)
        assert gap > spread
        np.testing.assert_allclose(proj.coords.mean(axis=0), 0, atol=1e-8)
    text = proj.to_csv().splitlines()
    assert text[0].startswith(f"# layer={k} explained_variance=")
    assert text[1] == "x,y,label" and len(text) == len(data.test) + 2
