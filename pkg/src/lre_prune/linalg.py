"""Dense linear-algebra kernel used by the redundancy analysis.

Tensors are plain ``numpy.ndarray`` values. Everything on the analysis path
(correlation matrices, redundancy matrices, transformation matrices) is
computed in float64; network weights stay float32.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ShapeError, SingularityError

DEFAULT_JITTER = 1e-6


def _check_finite(x: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise SingularityError(f"{what} produced non-finite values")
    return x


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions disagree: {a.shape} @ {b.shape}")
    return a @ b


def symmetrize(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    return 0.5 * (s + s.T)


def add_jitter(s: np.ndarray, eps: float = DEFAULT_JITTER) -> np.ndarray:
    """Return ``s`` with ``eps * trace(s) / n`` added to the diagonal.

    A zero-trace matrix gets an absolute ``eps`` so the result is still
    positive definite.
    """
    if eps < 0:
        raise ValueError("jitter must be non-negative")
    s = np.array(s, dtype=np.float64, copy=True)
    n = s.shape[0]
    scale = np.trace(s) / n
    if scale <= 0:
        scale = 1.0
    s[np.diag_indices(n)] += eps * scale
    return s


def jitter_amount(s: np.ndarray, eps: float = DEFAULT_JITTER) -> float:
    """Diagonal increment that :func:`add_jitter` would apply."""
    scale = np.trace(s) / s.shape[0]
    return float(eps * (scale if scale > 0 else 1.0))


def cholesky(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ShapeError(f"expected a square matrix, got {s.shape}")
    try:
        return np.linalg.cholesky(s)
    except np.linalg.LinAlgError as exc:
        raise SingularityError(
            "matrix is not positive definite (non-positive Cholesky pivot); "
            "increase the jitter"
        ) from exc


def spd_solve(s: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``s @ x = rhs`` for symmetric positive-definite ``s``."""
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.ndim != 2:
        raise ShapeError(f"rhs must be rank-2, got {rhs.shape}")
    if rhs.shape[0] != np.shape(s)[0]:
        raise ShapeError(f"rhs has {rhs.shape[0]} rows, matrix has order {np.shape(s)[0]}")
    lower = cholesky(s)
    y = solve_triangular(lower, rhs, lower=True, check_finite=False)
    x = solve_triangular(lower.T, y, lower=False, check_finite=False)
    return _check_finite(x, "spd_solve")


def spd_inverse(s: np.ndarray) -> np.ndarray:
    inv = spd_solve(s, np.eye(np.shape(s)[0]))
    return symmetrize(inv)
