"""Linear redundancy between the units of one layer.

For a layer with activations ``Z`` (units x samples) the redundancy matrix
``A`` is the zero-diagonal matrix minimising ``mean ||Z - A Z||^2``; row
``l`` is the least-squares prediction of unit ``l`` from all other units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, InsufficientSamplesError, ShapeError
from .linalg import DEFAULT_JITTER, add_jitter, jitter_amount, spd_inverse, symmetrize
from .network import Network, forward


@dataclass
class RedundancyAnalysis:
    layer_index: int
    S: np.ndarray
    A: np.ndarray
    residuals: np.ndarray
    sample_count: int
    jitter: float = 0.0
    mean_abs: np.ndarray | None = None

    @property
    def unit_count(self) -> int:
        return self.A.shape[0]

    def to_json(self) -> dict:
        return {
            "layer": self.layer_index,
            "unit_count": self.unit_count,
            "sample_count": self.sample_count,
            "jitter": self.jitter,
            "S": self.S.tolist(),
            "A": self.A.tolist(),
            "residuals": self.residuals.tolist(),
            "mean_abs": None if self.mean_abs is None else self.mean_abs.tolist(),
        }


@dataclass
class GdConfig:
    step_size: float | None = None  # None: 1 / (2 * largest eigenvalue of S)
    max_iters: int = 5000
    stop_tolerance: float = 1e-9
    window: int = 10

    def __post_init__(self):
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError("step_size must be positive")


def default_sample_budget(units: int) -> int:
    return max(4 * units, 2048)


def collect_activations(
    net: Network, k: int, data, m: int | None = None, batch_size: int = 512
) -> np.ndarray:
    """Post-activation matrix of layer ``k``: one row per unit, one column per sample.

    For conv layers every spatial position of every sample is a column, so
    enough samples are taken to cover ``m`` columns.
    """
    if not (0 <= k < len(net.layers)) or not net.layers[k].parametric:
        raise ShapeError(f"layer {k} is not a dense/conv layer")
    net.consumer_of(k)
    inputs = np.asarray(getattr(data, "inputs", data))
    n_units = net.units(k)
    m = default_sample_budget(n_units) if m is None else int(m)
    if m < 2:
        raise InsufficientSamplesError("need at least 2 activation samples")
    out_shape = net.shapes()[net.activation_end(k) + 1]
    per_sample = int(np.prod(out_shape[1:])) if len(out_shape) > 1 else 1
    take = min(len(inputs), math.ceil(m / per_sample))
    if take * per_sample < 2:
        raise InsufficientSamplesError(f"only {take * per_sample} activation samples available")
    chunks = []
    for s in range(0, take, batch_size):
        _, (cap,) = forward(net, inputs[s : min(s + batch_size, take)], capture=[k])
        z = cap.post_activation
        if z.ndim == 4:
            z = z.transpose(1, 0, 2, 3).reshape(z.shape[1], -1)
        else:
            z = z.T
        chunks.append(z.astype(np.float64))
    return np.concatenate(chunks, axis=1)


def correlation(Z: np.ndarray, jitter: float = DEFAULT_JITTER) -> np.ndarray:
    """Second-moment matrix ``Z Z^T / m`` plus relative diagonal jitter."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.size == 0:
        raise ShapeError("Z must be a non-empty units x samples matrix")
    S = symmetrize(Z @ Z.T / Z.shape[1])
    return add_jitter(S, jitter) if jitter else S


def closed_form_A(S: np.ndarray) -> np.ndarray:
    """Row ``l`` is ``e_l - P[l] / P[l, l]`` with ``P = S^-1``, i.e. ``A = I - D S^-1``."""
    P = spd_inverse(S)
    A = -P / np.diag(P)[:, None]
    np.fill_diagonal(A, 0.0)
    return A


def residuals(Z: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Per-unit mean squared prediction error ``mean_t (Z - A Z)[l, t]^2``."""
    Z = np.asarray(Z, dtype=np.float64)
    E = Z - A @ Z
    return np.mean(E * E, axis=1)


def objective(Z: np.ndarray, A: np.ndarray) -> float:
    return float(residuals(Z, A).sum())


def _largest_eigenvalue(S: np.ndarray, iters: int = 100) -> float:
    v = np.ones(S.shape[0]) / math.sqrt(S.shape[0])
    lam = 0.0
    for _ in range(iters):
        w = S @ v
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            return 0.0
        v = w / lam
    return lam


def gd_A(
    Z: np.ndarray, cfg: GdConfig | None = None, jitter: float = 0.0, history: list | None = None
) -> np.ndarray:
    """Projected gradient descent on ``mean ||Z - A Z||^2`` with ``diag(A) = 0``.

    Steps that would increase the objective are rejected and the step is
    halved, so accepted iterates never increase the objective. Accepted
    objective values are appended to ``history`` when given.
    """
    cfg = cfg or GdConfig()
    S = correlation(Z, jitter)
    if not np.all(np.isfinite(S)):
        raise DivergenceError("non-finite activations at iteration 0", iteration=0)
    n = S.shape[0]
    I = np.eye(n)
    f = lambda A: float(np.trace((I - A) @ S @ (I - A).T))
    if cfg.step_size is None:
        lam = _largest_eigenvalue(S)
        step = 1.0 / (2.0 * 1.05 * lam) if lam > 0 else 1.0
    else:
        step = cfg.step_size
    A = np.zeros((n, n))
    value = f(A)
    if history is None:
        history = []
    history.append(value)
    for it in range(cfg.max_iters):
        grad = -2.0 * (I - A) @ S
        trial = A - step * grad
        np.fill_diagonal(trial, 0.0)
        trial_value = f(trial)
        if not math.isfinite(trial_value):
            raise DivergenceError(f"gradient descent diverged at iteration {it}", iteration=it)
        if trial_value > value:
            step *= 0.5
            continue
        A, value = trial, trial_value
        history.append(value)
        if len(history) > cfg.window:
            old = history[-1 - cfg.window]
            if old <= 0 or (old - value) / old < cfg.stop_tolerance:
                break
    return A


def analyze(
    net: Network,
    k: int,
    data,
    m: int | None = None,
    jitter: float = DEFAULT_JITTER,
    method: str = "closed_form",
    gd: GdConfig | None = None,
) -> RedundancyAnalysis:
    Z = collect_activations(net, k, data, m)
    return analyze_activations(Z, k, jitter, method, gd)


def analyze_activations(
    Z: np.ndarray,
    k: int = -1,
    jitter: float = DEFAULT_JITTER,
    method: str = "closed_form",
    gd: GdConfig | None = None,
) -> RedundancyAnalysis:
    S0 = correlation(Z, 0.0)
    S = add_jitter(S0, jitter)
    if method == "closed_form":
        A = closed_form_A(S)
    elif method == "gd":
        A = gd_A(Z, gd, jitter)
    else:
        raise ValueError(f"unknown method {method!r}")
    return RedundancyAnalysis(
        layer_index=k,
        S=S,
        A=A,
        residuals=residuals(Z, A),
        sample_count=Z.shape[1],
        jitter=jitter_amount(S0, jitter),
        mean_abs=np.mean(np.abs(Z), axis=1),
    )


def removal_count(n: int, gamma: float) -> int:
    """``floor(gamma * n)`` units, never emptying the layer."""
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    return min(int(math.floor(gamma * n + 1e-9)), n - 1)


def rank_units(analysis, gamma: float) -> list[int]:
    """Indices of the ``floor(gamma * n)`` lowest-residual units, ties to the lower index."""
    r = np.asarray(getattr(analysis, "residuals", analysis))
    count = removal_count(len(r), gamma)
    return [int(i) for i in np.argsort(r, kind="stable")[:count]]
