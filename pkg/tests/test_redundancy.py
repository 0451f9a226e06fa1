import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lre_prune.data import PlantSpec, plant_redundancy
from lre_prune.errors import DivergenceError, InsufficientSamplesError, ShapeError, SingularityError
from lre_prune.layers import Dense
from lre_prune.network import Network, build_network
from lre_prune.redundancy import (
    GdConfig,
    analyze,
    analyze_activations,
    closed_form_A,
    collect_activations,
    correlation,
    default_sample_budget,
    gd_A,
    objective,
    rank_units,
    removal_count,
    residuals,
)


def ols_oracle(Z):
    """Regress each row of Z on all the other rows."""
    n = Z.shape[0]
    A = np.zeros((n, n))
    for l in range(n):
        others = [i for i in range(n) if i != l]
        coef, *_ = np.linalg.lstsq(Z[others].T, Z[l], rcond=None)
        A[l, others] = coef
    return A


def ridge_oracle(Z, delta):
    """Least squares on data augmented with sqrt(m * delta) * I rows."""
    n, m = Z.shape
    A = np.zeros((n, n))
    for l in range(n):
        others = [i for i in range(n) if i != l]
        X = np.vstack([Z[others].T, np.sqrt(m * delta) * np.eye(n - 1)])
        y = np.concatenate([Z[l], np.zeros(n - 1)])
        A[l, others] = np.linalg.lstsq(X, y, rcond=None)[0]
    return A


def data_with_correlation(S, m, seed=0):
    """Z whose empirical second moment is exactly S."""
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(S.shape[0], m))
    q, _ = np.linalg.qr(g.T)
    return np.linalg.cholesky(S) @ q.T * np.sqrt(m)


def test_correlation_matches_double_loop():
    Z = np.random.default_rng(0).normal(size=(4, 100))
    S = correlation(Z, 0.0)
    oracle = np.zeros((4, 4))
    for i in range(4):
        for j in range(4):
            oracle[i, j] = sum(Z[i, t] * Z[j, t] for t in range(100)) / 100
    np.testing.assert_allclose(S, oracle, atol=1e-12)
    np.testing.assert_allclose(correlation(np.eye(2), 0.0), 0.5 * np.eye(2))


def test_duplicate_row_singular_until_jittered():
    z = np.random.default_rng(1).normal(size=(1, 30))
    Z = np.vstack([z, z])
    assert abs(np.linalg.det(correlation(Z, 0.0))) < 1e-12
    closed_form_A(correlation(Z))
    with pytest.raises(SingularityError):
        closed_form_A(correlation(Z, 0.0) - 1e-9 * np.eye(2))


def test_closed_form_examples():
    np.testing.assert_array_equal(closed_form_A(np.eye(2)), np.zeros((2, 2)))
    S = np.array([[2.0, 1.0], [1.0, 2.0]])
    np.testing.assert_allclose(closed_form_A(S), [[0, 0.5], [0.5, 0]], atol=1e-15)
    np.testing.assert_allclose(ols_oracle(data_with_correlation(S, 50)), [[0, 0.5], [0.5, 0]], atol=1e-12)


def test_sum_of_two_units_is_recovered():
    rng = np.random.default_rng(2)
    z = rng.normal(size=(2, 500))
    Z = np.vstack([z, z.sum(axis=0)])
    an = analyze_activations(Z)
    np.testing.assert_allclose(an.A[2], [1, 1, 0], atol=1e-5)
    np.testing.assert_allclose(an.A, ridge_oracle(Z, an.jitter), atol=1e-8)
    assert an.residuals[2] < 1e-8


def test_closed_form_matches_ols_on_random_instances():
    rng = np.random.default_rng(3)
    for n in (2, 5, 17, 40):
        Z = rng.normal(size=(n, 16 * n)) + 0.3 * rng.normal(size=(n, 1))
        A = closed_form_A(correlation(Z, 0.0))
        np.testing.assert_allclose(A, ols_oracle(Z), atol=1e-8)
        assert np.all(np.diag(A) == 0)


def test_first_order_optimality():
    rng = np.random.default_rng(4)
    Z = rng.normal(size=(6, 200)) + rng.normal(size=(6, 1))
    A = closed_form_A(correlation(Z, 0.0))
    base = residuals(Z, A)
    for _ in range(50):
        eps = rng.normal(size=A.shape)
        np.fill_diagonal(eps, 0)
        eps *= 1e-3 / np.linalg.norm(eps)
        assert np.all(residuals(Z, A + eps) >= base - 1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 8), st.floats(0.1, 100.0), st.integers(0, 2**31 - 1))
def test_objective_identity_and_scale_covariance(n, c, seed):
    Z = np.random.default_rng(seed).normal(size=(n, 20 * n))
    an = analyze_activations(Z)
    assert objective(Z, an.A) == pytest.approx(np.mean(np.sum((Z - an.A @ Z) ** 2, axis=0)), abs=1e-10)
    assert objective(Z, an.A) == pytest.approx(an.residuals.sum(), abs=1e-10)
    scaled = analyze_activations(c * Z)
    np.testing.assert_allclose(scaled.A, an.A, atol=1e-9)
    np.testing.assert_allclose(scaled.residuals, c * c * an.residuals, rtol=1e-8, atol=1e-12)


def test_gd_matches_closed_form():
    S = np.array([[2.0, 1.0], [1.0, 2.0]])
    Z = data_with_correlation(S, 64)
    np.testing.assert_allclose(gd_A(Z), closed_form_A(S), atol=1e-3)
    rng = np.random.default_rng(5)
    Z = rng.normal(size=(8, 400)) + 0.5 * rng.normal(size=(8, 1))
    np.testing.assert_allclose(gd_A(Z), closed_form_A(correlation(Z, 0.0)), atol=1e-3)


def test_gd_identity_data_gives_zero():
    np.testing.assert_allclose(gd_A(3.0 * np.eye(4)), np.zeros((4, 4)), atol=1e-12)


def test_gd_planted_sum_has_tiny_residual():
    rng = np.random.default_rng(6)
    z = rng.normal(size=(4, 600))
    Z = np.vstack([z, z[0] + z[1]])
    A = gd_A(Z)
    r = residuals(Z, A)
    assert np.all(np.diag(A) == 0)
    assert r[4] < 1e-4 * r.mean()


def test_gd_objective_never_increases():
    Z = np.random.default_rng(7).normal(size=(5, 100))
    history = []
    A = gd_A(Z, GdConfig(step_size=10.0, max_iters=200), history=history)
    assert len(history) > 2
    assert all(b <= a for a, b in zip(history, history[1:]))
    assert history[-1] == pytest.approx(objective(Z, A), rel=1e-9)


def test_gd_divergence_names_iteration():
    Z = np.random.default_rng(8).normal(size=(3, 20))
    Z[0, 0] = np.inf
    with pytest.raises(DivergenceError) as info:
        gd_A(Z)
    assert info.value.iteration == 0
    with pytest.raises(ValueError):
        GdConfig(step_size=0.0)


def test_rank_units_examples():
    assert rank_units(np.array([0.5, 0.0, 0.3]), 0.34) == [1]
    assert rank_units(np.full(4, 0.2), 0.5) == [0, 1]
    assert len(rank_units(np.array([1.0, 2.0, 3.0]), 1.0)) == 2
    assert removal_count(4, 0.75) == 3
    assert removal_count(1, 0.9) == 0
    with pytest.raises(ValueError):
        removal_count(4, 0.0)


def test_collect_identity_layer():
    n = 4
    net = Network([Dense(np.eye(n), np.zeros(n)), Dense(np.eye(n), np.zeros(n))], (n,), n)
    Z = collect_activations(net, 0, np.eye(n), m=n)
    np.testing.assert_array_equal(Z, np.eye(n))


def test_collect_conv_columns_and_proportional_channels():
    arch = [{"kind": "conv2d", "out": 3, "kernel": 3}, {"kind": "relu"}, {"kind": "flatten"}, {"kind": "dense"}]
    net = build_network(arch, (2, 5, 5), 2, seed=0, dtype=np.float64)
    net = plant_redundancy(net, PlantSpec(0, {2: {1: 0.5}}))
    x = np.random.default_rng(0).uniform(size=(10, 2, 5, 5))
    Z = collect_activations(net, 0, x, m=90)
    assert Z.shape == (3, 90)  # 10 samples x 9 positions
    np.testing.assert_allclose(Z[2], 0.5 * Z[1], atol=1e-14)


def test_collect_errors():
    net = build_network([{"kind": "dense", "out": 3}, {"kind": "relu"}, {"kind": "dense"}], (2,), 2)
    with pytest.raises(InsufficientSamplesError):
        collect_activations(net, 0, np.ones((5, 2)), m=1)
    with pytest.raises(InsufficientSamplesError):
        collect_activations(net, 0, np.ones((1, 2)), m=10)
    with pytest.raises(ShapeError):
        collect_activations(net, 1, np.ones((5, 2)))
    with pytest.raises(ShapeError):
        collect_activations(net, 2, np.ones((5, 2)))
    assert default_sample_budget(10) == 2048 and default_sample_budget(1000) == 4000


def test_planted_coefficients_recovered():
    # linear position: no nonlinearity between layer 0 and its consumer
    rng = np.random.default_rng(9)
    q, _ = np.linalg.qr(rng.normal(size=(96, 24)))
    first = Dense(q.T.copy(), np.zeros(24))
    net = Network([first, Dense(rng.normal(size=(24, 24)), np.zeros(24)), Dense(rng.normal(size=(3, 24)), np.zeros(3))], (96,), 3)
    deps = {3: {1: 1.0}, 7: {2: 0.5, 5: -0.5}, 9: {4: 2.0}, 11: {6: 0.3, 8: 0.7}}
    net = plant_redundancy(net, PlantSpec(0, deps, mode="linear"))
    an = analyze(net, 0, rng.normal(size=(4000, 96)), jitter=1e-8)
    for r, d in deps.items():
        row = np.zeros(24)
        for h, c in d.items():
            row[h] = c
        assert np.abs(an.A[r] - row).max() < 1e-6
    assert an.residuals[list(deps)].max() < 1e-10
    assert np.all(np.diag(an.A) == 0)
    doc = json.loads(json.dumps(an.to_json()))
    assert doc["unit_count"] == 24 and len(doc["A"]) == 24
