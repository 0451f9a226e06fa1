"""Unit removal with outgoing-weight redistribution.

Removing units ``J`` from layer ``k`` replaces the consumer's weights ``W``
by ``W @ T`` where ``T`` maps the kept activations back to (a prediction
of) the full activation vector. When the removed activations are exact
linear combinations of the kept ones the consumer's pre-activations do not
change.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MutualRedundancyError, ShapeError, UndefinedMetricError
from .layers import Conv2d
from .linalg import spd_inverse
from .network import Network, forward
from .redundancy import RedundancyAnalysis

MAX_CONDITION = 1e8


@dataclass(frozen=True, eq=False)
class TransformationPlan:
    layer_index: int
    removed: tuple[int, ...]
    kept: tuple[int, ...]
    A_plus: np.ndarray
    A_minus: np.ndarray
    U: np.ndarray
    T: np.ndarray

    @property
    def unit_count(self) -> int:
        return self.T.shape[0]


@dataclass
class GuardReport:
    removal_index: int
    update_row_norm_mean: float
    weight_row_norm_mean: float
    predictability_score: float
    applied: bool

    @property
    def update_too_large(self) -> bool:
        return self.update_row_norm_mean > self.weight_row_norm_mean

    @property
    def too_predictive(self) -> bool:
        return self.predictability_score > 1.0


def build_transformation(A: np.ndarray, J, layer_index: int = -1) -> TransformationPlan:
    """Plan for removing units ``J`` given redundancy matrix ``A``.

    ``U`` solves ``(I - A[J, J]) U = A[J, H]``; ``T`` has identity rows on
    the kept units ``H`` and the rows of ``U`` on ``J``.
    """
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    J = tuple(sorted({int(j) for j in J}))
    if not J:
        raise ValueError("removal set is empty")
    if len(J) >= n or J[0] < 0 or J[-1] >= n:
        raise ValueError(f"removal set {J} must be a strict subset of {n} units")
    H = tuple(i for i in range(n) if i not in set(J))
    A_plus = A[np.ix_(J, J)]
    A_minus = A[np.ix_(J, H)]
    M = np.eye(len(J)) - A_plus
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise MutualRedundancyError(
            f"I - A[J, J] is near-singular (condition {cond:.3g}); removed units predict each "
            "other circularly, remove fewer at once"
        )
    U = np.linalg.solve(M, A_minus)
    T = np.zeros((n, len(H)))
    T[list(H), np.arange(len(H))] = 1.0
    T[list(J)] = U
    return TransformationPlan(layer_index, J, H, A_plus, A_minus, U, T)


def _redistribute(W3: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Apply ``T`` along the channel axis of an (out, channels, positions) array."""
    return np.einsum("ocp,ch->ohp", W3, T)


def readjust_dense(W_next: np.ndarray, plan: TransformationPlan) -> np.ndarray:
    W_next = np.asarray(W_next)
    if W_next.ndim != 2 or W_next.shape[1] != plan.unit_count:
        raise ShapeError(f"weight {W_next.shape} does not have {plan.unit_count} input columns")
    return (W_next.astype(np.float64) @ plan.T).astype(W_next.dtype)


def readjust_conv(W_next: np.ndarray, plan: TransformationPlan) -> np.ndarray:
    W_next = np.asarray(W_next)
    if W_next.ndim != 4 or W_next.shape[1] != plan.unit_count:
        raise ShapeError(f"kernel {W_next.shape} does not have {plan.unit_count} input channels")
    o, c, kh, kw = W_next.shape
    W3 = W_next.reshape(o, c, kh * kw).astype(np.float64)
    return _redistribute(W3, plan.T).reshape(o, -1, kh, kw).astype(W_next.dtype)


def _row_norm_mean(W: np.ndarray) -> float:
    return float(np.linalg.norm(W.reshape(W.shape[0], -1), axis=1).mean())


def guard_update(W_old, W_new, A, mean_abs, j: int) -> GuardReport:
    """Decide whether a redistribution of unit ``j`` is trustworthy.

    The update is rejected if the mean row norm of ``W_new - W_old`` exceeds
    the mean row norm of ``W_old``, or if ``mean_l |A[l, j]| * mean |Z_j|``
    (off-diagonal ``l``) exceeds 1. When ``W_new`` has one input channel
    fewer than ``W_old``, channel ``j`` of ``W_old`` is dropped before
    differencing.
    """
    W_old = np.asarray(W_old, dtype=np.float64)
    W_new = np.asarray(W_new, dtype=np.float64)
    ref = W_old
    if W_new.shape != W_old.shape:
        if W_old.ndim < 2 or W_new.shape[1] != W_old.shape[1] - 1:
            raise ShapeError(f"cannot compare weights {W_old.shape} and {W_new.shape}")
        ref = np.delete(W_old, j, axis=1)
    update = _row_norm_mean(W_new - ref)
    weight = _row_norm_mean(W_old)
    A = np.asarray(A, dtype=np.float64)
    col = np.abs(np.delete(A[:, j], j))
    score = float(col.mean() * float(np.asarray(mean_abs)[j])) if col.size else 0.0
    applied = not (update > weight or score > 1.0)
    return GuardReport(j, update, weight, score, applied)


# -- sequential elimination ------------------------------------------------


class Eliminator:
    """Removes units one at a time from a single precision matrix ``S^-1``.

    Dropping unit ``j`` replaces the precision matrix by its Schur
    complement, which is the precision of the remaining units. The row
    ``-P[j] / P[j, j]`` of the current matrix is therefore both the chained
    substitution of the multi-removal algebra and the exact least-squares
    predictor of ``j`` from the units still present.
    """

    def __init__(self, analysis: RedundancyAnalysis):
        self.P = spd_inverse(analysis.S)
        self.ids = list(range(analysis.unit_count))
        mean_abs = analysis.mean_abs
        self.mean_abs = np.zeros(len(self.ids)) if mean_abs is None else np.asarray(mean_abs, float).copy()

    def A(self) -> np.ndarray:
        A = -self.P / np.diag(self.P)[:, None]
        np.fill_diagonal(A, 0.0)
        return A

    def residuals(self) -> np.ndarray:
        """Jittered least-squares residual of each current unit, ``1 / P[l, l]``."""
        return 1.0 / np.diag(self.P)

    def prediction_row(self, j: int) -> np.ndarray:
        others = [i for i in range(len(self.ids)) if i != j]
        return -self.P[j, others] / self.P[j, j]

    def remove(self, j: int) -> None:
        p = self.P[:, j].copy()
        self.P = self.P - np.outer(p, p) / p[j]
        self.P = np.delete(np.delete(self.P, j, axis=0), j, axis=1)
        self.ids.pop(j)
        self.mean_abs = np.delete(self.mean_abs, j)

    def next_greedy(self) -> int:
        r = self.residuals()
        best = min(range(len(self.ids)), key=lambda i: (r[i], self.ids[i]))
        return self.ids[best]


def consumer_weight3(layer) -> np.ndarray:
    """Consumer weights viewed as (out, channels, positions) in float64."""
    if isinstance(layer, Conv2d):
        o, c, kh, kw = layer.weight.shape
        return layer.weight.reshape(o, c, kh * kw).astype(np.float64)
    return layer.weight.astype(np.float64)


@dataclass
class RemovalResult:
    network: Network
    removed: list[int]
    guards: list[GuardReport] = field(default_factory=list)

    @property
    def guards_fired(self) -> list[GuardReport]:
        return [g for g in self.guards if not g.applied]


def remove_units(
    net: Network,
    k: int,
    order,
    analysis: RedundancyAnalysis | None,
    use_adjustment: bool = True,
    guards: bool = True,
    eliminator: Eliminator | None = None,
) -> RemovalResult:
    """Remove units of layer ``k`` in the given order, redistributing each one.

    ``order`` holds unit ids of layer ``k`` as it is in ``net``. With
    ``use_adjustment=False`` columns are simply dropped. A redistribution
    that fails :func:`guard_update` falls back to dropping the column.
    """
    layer = net.layers[k]
    if not layer.parametric:
        raise ShapeError(f"layer {k} is not dense/conv")
    n = layer.units
    order = [int(j) for j in order]
    if len(set(order)) != len(order) or any(not 0 <= j < n for j in order):
        raise ValueError(f"invalid removal set {order} for {n} units")
    if len(order) >= n:
        raise ValueError("cannot remove every unit of a layer")
    c = net.consumer_of(k)
    consumer = net.layers[c]
    W3 = consumer_weight3(consumer)
    if consumer.kind == "dense":
        if W3.shape[1] % n:
            raise ShapeError(f"consumer has {W3.shape[1]} inputs, not a multiple of {n} units")
        W3 = W3.reshape(W3.shape[0], n, -1)

    if use_adjustment and eliminator is None:
        if analysis is None:
            raise ValueError("adjustment needs a redundancy analysis")
        if analysis.unit_count != n:
            raise ShapeError(f"analysis covers {analysis.unit_count} units, layer has {n}")
        eliminator = Eliminator(analysis)
    ids = list(range(n))
    reports = []
    for j_orig in order:
        j = ids.index(j_orig)
        kept = [i for i in range(len(ids)) if i != j]
        if use_adjustment:
            row = eliminator.prediction_row(j)
            W_new = W3[:, kept, :] + W3[:, j, None, :] * row[None, :, None]
            if guards:
                rep = guard_update(W3, W_new, eliminator.A(), eliminator.mean_abs, j)
                rep.removal_index = j_orig
                reports.append(rep)
                if not rep.applied:
                    W_new = W3[:, kept, :]
            eliminator.remove(j)
        else:
            W_new = W3[:, kept, :]
        W3 = W_new
        ids.pop(j)

    out = net.copy()
    keep = np.array(ids, dtype=np.int64)
    dtype = layer.weight.dtype
    target = out.layers[k]
    target.weight = target.weight[keep].copy()
    target.bias = target.bias[keep].copy()
    cons = out.layers[c]
    if isinstance(cons, Conv2d):
        cons.weight = W3.reshape(cons.weight.shape[0], len(ids), *cons.weight.shape[2:]).astype(dtype)
    else:
        cons.weight = W3.reshape(W3.shape[0], -1).astype(dtype)
    out.shapes()
    return RemovalResult(out, order, reports)


def prune_layer(
    net: Network,
    k: int,
    J,
    analysis: RedundancyAnalysis | None,
    use_adjustment: bool = True,
    guards: bool = True,
) -> Network:
    """Remove units ``J`` (in the given order) from layer ``k``; see :func:`remove_units`."""
    return remove_units(net, k, J, analysis, use_adjustment, guards).network


def apply_plan(net: Network, plan: TransformationPlan) -> Network:
    """Remove ``plan.removed`` from layer ``plan.layer_index`` in one shot, without guards."""
    k = plan.layer_index
    layer = net.layers[k]
    c = net.consumer_of(k)
    out = net.copy()
    keep = np.array(plan.kept, dtype=np.int64)
    out.layers[k].weight = layer.weight[keep].copy()
    out.layers[k].bias = layer.bias[keep].copy()
    cons = out.layers[c]
    if isinstance(cons, Conv2d):
        cons.weight = readjust_conv(cons.weight, plan)
    else:
        W3 = cons.weight.astype(np.float64).reshape(cons.weight.shape[0], plan.unit_count, -1)
        cons.weight = _redistribute(W3, plan.T).reshape(cons.weight.shape[0], -1).astype(cons.weight.dtype)
    out.shapes()
    return out


def preactivation_perturbation(net_before: Network, net_after: Network, k_next: int, probe) -> float:
    """Relative L2 change of layer ``k_next``'s pre-activation on ``probe``."""
    probe = np.asarray(getattr(probe, "inputs", probe))
    _, (before,) = forward(net_before, probe, capture=[k_next])
    _, (after,) = forward(net_after, probe, capture=[k_next])
    y0 = before.pre_activation.astype(np.float64)
    y1 = after.pre_activation.astype(np.float64)
    ref = np.linalg.norm(y0)
    if ref == 0:
        raise UndefinedMetricError("reference pre-activation has zero norm")
    return float(np.linalg.norm(y1 - y0) / ref)
