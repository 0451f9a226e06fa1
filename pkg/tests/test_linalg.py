import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lre_prune.errors import ShapeError, SingularityError
from lre_prune.linalg import add_jitter, cholesky, jitter_amount, matmul, spd_inverse, spd_solve, symmetrize


def loop_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def gauss_solve(a, b):
    """Gaussian elimination with partial pivoting."""
    a = a.astype(float).copy()
    b = b.astype(float).copy()
    n = len(a)
    for c in range(n):
        p = c + np.argmax(np.abs(a[c:, c]))
        a[[c, p]], b[[c, p]] = a[[p, c]], b[[p, c]]
        for r in range(c + 1, n):
            f = a[r, c] / a[c, c]
            a[r, c:] -= f * a[c, c:]
            b[r] -= f * b[c]
    x = np.zeros_like(b)
    for r in range(n - 1, -1, -1):
        x[r] = (b[r] - a[r, r + 1 :] @ x[r + 1 :]) / a[r, r]
    return x


def random_spd(rng, n):
    g = rng.normal(size=(n, n))
    return g @ g.T + n * np.eye(n)


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(0)
    for shape in [(1, 1, 1), (3, 4, 2), (7, 5, 6)]:
        a = rng.normal(size=shape[:2])
        b = rng.normal(size=shape[1:])
        np.testing.assert_allclose(matmul(a, b), loop_matmul(a, b), atol=1e-12)


def test_matmul_rejects_mismatch():
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ShapeError):
        matmul(np.ones(3), np.ones((3, 1)))


def test_jitter_examples():
    np.testing.assert_array_equal(add_jitter(np.eye(2), 0.0), np.eye(2))
    np.testing.assert_allclose(add_jitter(np.eye(2), 1e-6), np.diag([1 + 1e-6, 1 + 1e-6]), rtol=0, atol=1e-15)
    assert jitter_amount(4 * np.eye(3), 1e-6) == pytest.approx(4e-6)


def test_jitter_makes_duplicate_gram_positive_definite():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(3, 50))
    z = np.vstack([z, z[:1]])
    s = z @ z.T / 50
    with pytest.raises(SingularityError):
        cholesky(s - 1e-12 * np.eye(4))
    lower = cholesky(add_jitter(s, 1e-6))
    assert np.all(np.diag(lower) > 0)


def test_zero_matrix_gets_absolute_jitter():
    s = add_jitter(np.zeros((2, 2)), 1e-6)
    np.testing.assert_allclose(s, 1e-6 * np.eye(2))


def test_negative_jitter_rejected():
    with pytest.raises(ValueError):
        add_jitter(np.eye(2), -1.0)


def test_cholesky_reports_non_positive_pivot():
    with pytest.raises(SingularityError, match="jitter"):
        cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ShapeError):
        cholesky(np.ones((2, 3)))


def test_spd_solve_matches_gaussian_elimination():
    rng = np.random.default_rng(2)
    for n in (1, 2, 5, 12):
        s = random_spd(rng, n)
        rhs = rng.normal(size=(n, 3))
        np.testing.assert_allclose(spd_solve(s, rhs), gauss_solve(s, rhs), rtol=1e-10, atol=1e-12)


def test_spd_solve_shape_errors():
    with pytest.raises(ShapeError):
        spd_solve(np.eye(3), np.ones(3))
    with pytest.raises(ShapeError):
        spd_solve(np.eye(3), np.ones((2, 1)))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_inverse_is_symmetric_and_inverts(n, seed):
    rng = np.random.default_rng(seed)
    s = random_spd(rng, n)
    inv = spd_inverse(s)
    np.testing.assert_array_equal(inv, inv.T)
    np.testing.assert_allclose(s @ inv, np.eye(n), atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (4, 4), elements=st.floats(-10, 10)))
def test_symmetrize_properties(m):
    s = symmetrize(m)
    np.testing.assert_array_equal(s, s.T)
    np.testing.assert_allclose(symmetrize(s), s)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(2, 30), st.integers(0, 2**31 - 1))
def test_jittered_gram_always_factorizes(n, m, seed):
    z = np.random.default_rng(seed).normal(size=(n, m))
    z[0] = 0.0
    s = symmetrize(z @ z.T / m)
    lower = cholesky(add_jitter(s, 1e-6))
    np.testing.assert_allclose(lower @ lower.T, add_jitter(s, 1e-6), atol=1e-9)
