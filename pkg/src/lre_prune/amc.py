"""Annealed prune/fine-tune loop with redundancy-guided unit removal."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import LabeledDataset
from .linalg import DEFAULT_JITTER
from .network import Network, count_params, evaluate, forward, sgd_epoch, softmax
from .pruner import Eliminator, preactivation_perturbation, remove_units
from .redundancy import analyze, removal_count

log = logging.getLogger(__name__)

SCHEDULES = ("top_down", "round_robin")
LOG_FLOOR = 1e-12
PROBE_SIZE = 256


@dataclass
class AMCConfig:
    gamma: float = 0.75
    epsilon: float = 0.05
    lam: float = 0.75
    temperature: float = 4.0
    finetune_max_epochs: int = 50
    plateau_patience: int = 3
    lr_decay: float = 0.5
    lr_floor: float = 1e-6
    learning_rate: float = 1e-4
    batch_size: int = 64
    momentum: float = 0.0
    schedule: str = "top_down"
    use_adjustment: bool = True
    guards: bool = True
    sample_budget: int | None = None
    jitter: float = DEFAULT_JITTER
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be non-negative")
        if not 0 <= self.lam <= 1:
            raise ValueError("lam must lie in [0, 1]")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        if not self.learning_rate > 0 or not 0 < self.lr_decay < 1:
            raise ValueError("learning_rate must be positive and lr_decay in (0, 1)")


@dataclass
class ShrinkRecord:
    step: int
    layer: int
    removed: list[int]
    units_before: int
    units_after: int
    guards_fired: list[dict] = field(default_factory=list)
    accuracy_before: float | None = None
    accuracy_after: float | None = None
    params_before: int = 0
    params_after: int = 0
    fine_tuned: bool = False
    accepted: bool = False
    perturbation_adjusted: float | None = None
    perturbation_unadjusted: float | None = None

    @property
    def noop(self) -> bool:
        return not self.removed

    def to_json(self) -> dict:
        return asdict(self)


# -- distillation ------------------------------------------------------------


def _log_softmax(x: np.ndarray) -> np.ndarray:
    x = x - x.max(axis=-1, keepdims=True)
    return x - np.log(np.exp(x).sum(axis=-1, keepdims=True))


def distill_loss_and_grad(v, z, y, temperature: float, lam: float) -> tuple[float, np.ndarray]:
    """Distillation loss of student logits ``v`` and its gradient.

    ``(1 - lam) * H(softmax(z / T), softmax(v / T)) + lam * H(onehot(y), softmax(v))``
    with ``H(p, q) = -sum p log q``, averaged over the batch. No ``T^2``
    factor is applied to the soft term.
    """
    v = np.asarray(v, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if v.shape != z.shape:
        raise ValueError(f"student {v.shape} and teacher {z.shape} logits differ in shape")
    n = v.shape[0]
    y = np.asarray(y, dtype=np.int64)
    floor = math.log(LOG_FLOOR)
    p_teacher = softmax(z / temperature)
    log_q_soft = np.maximum(_log_softmax(v / temperature), floor)
    log_q_hard = np.maximum(_log_softmax(v), floor)
    soft = -(p_teacher * log_q_soft).sum(axis=1)
    hard = -log_q_hard[np.arange(n), y]
    loss = float(((1 - lam) * soft + lam * hard).mean())
    onehot = np.zeros_like(v)
    onehot[np.arange(n), y] = 1.0
    grad = (1 - lam) * (softmax(v / temperature) - p_teacher) / temperature + lam * (softmax(v) - onehot)
    return loss, grad / n


def distill_loss(v, z, y, temperature: float, lam: float) -> float:
    return distill_loss_and_grad(v, z, y, temperature, lam)[0]


@dataclass
class FineTuneResult:
    network: Network
    accuracy: float
    epochs: int
    stop_reason: str
    diverged: bool = False


def fine_tune(
    student: Network,
    teacher: Network,
    train: LabeledDataset,
    heldout: LabeledDataset,
    cfg: AMCConfig,
    baseline: float | None = None,
    rng: np.random.Generator | None = None,
) -> FineTuneResult:
    """Distil ``teacher`` into a copy of ``student`` until held-out accuracy is back within tolerance.

    The learning rate is multiplied by ``lr_decay`` after ``plateau_patience``
    epochs without held-out improvement; tuning stops once it falls below
    ``lr_floor``, after ``finetune_max_epochs`` epochs, or as soon as the
    accuracy is within ``epsilon`` of ``baseline``.
    """
    if baseline is None:
        baseline = evaluate(teacher, heldout)
    rng = rng or np.random.default_rng(cfg.seed)
    net = student.copy()
    acc = evaluate(net, heldout)
    if baseline - acc <= cfg.epsilon:
        return FineTuneResult(net, acc, 0, "within_tolerance")
    best_acc, best = acc, net.copy()
    inputs = np.asarray(train.inputs, dtype=net.dtype)
    labels = np.asarray(train.labels)

    def loss_grad(logits, idx):
        z = forward(teacher, inputs[idx])[0]
        return distill_loss_and_grad(logits, z, labels[idx], cfg.temperature, cfg.lam)

    lr = cfg.learning_rate
    stale = 0
    velocity = [dict() for _ in net.layers]
    for epoch in range(1, cfg.finetune_max_epochs + 1):
        loss = sgd_epoch(net, inputs, loss_grad, lr, cfg.batch_size, rng, velocity, cfg.momentum)
        if not math.isfinite(loss):
            log.warning("fine-tuning diverged in epoch %d; restoring best checkpoint", epoch)
            return FineTuneResult(best, best_acc, epoch, "diverged", diverged=True)
        acc = evaluate(net, heldout)
        if acc > best_acc:
            best_acc, best, stale = acc, net.copy(), 0
        else:
            stale += 1
        if baseline - acc <= cfg.epsilon:
            return FineTuneResult(net, acc, epoch, "within_tolerance")
        if stale >= cfg.plateau_patience:
            lr *= cfg.lr_decay
            stale = 0
            if lr < cfg.lr_floor:
                return FineTuneResult(best, best_acc, epoch, "lr_floor")
    return FineTuneResult(best, best_acc, cfg.finetune_max_epochs, "max_epochs")


# -- shrinking -----------------------------------------------------------------


def lre_shrink(
    net: Network,
    k: int,
    gamma: float,
    use_adjustment: bool,
    data,
    *,
    guards: bool = True,
    sample_budget: int | None = None,
    jitter: float = DEFAULT_JITTER,
    probe=None,
    step: int = 0,
) -> tuple[Network, ShrinkRecord]:
    """Remove up to ``floor(gamma * n)`` units of layer ``k`` (never all of them).

    One redundancy analysis is computed per call. Units are taken one at a
    time, always the one with the lowest residual among the units still
    present, and each removal is redistributed onto the survivors.
    """
    n = net.units(k)
    count = removal_count(n, gamma) if n > 1 else 0
    if count == 0:
        return net, ShrinkRecord(step, k, [], n, n)
    analysis = analyze(net, k, getattr(data, "inputs", data), sample_budget, jitter)
    elim = Eliminator(analysis)
    order = []
    for _ in range(count):
        j = elim.next_greedy()
        order.append(j)
        elim.remove(elim.ids.index(j))

    adjusted = remove_units(net, k, order, analysis, True, guards) if use_adjustment else None
    plain = remove_units(net, k, order, None, use_adjustment=False)
    chosen = adjusted if use_adjustment else plain
    rec = ShrinkRecord(step, k, order, n, n - len(order))
    rec.guards_fired = [asdict(g) for g in chosen.guards_fired]
    if probe is not None:
        k_next = net.consumer_of(k)
        try:
            if adjusted is None:
                adjusted = remove_units(net, k, order, analysis, True, guards)
            rec.perturbation_adjusted = preactivation_perturbation(net, adjusted.network, k_next, probe)
            rec.perturbation_unadjusted = preactivation_perturbation(net, plain.network, k_next, probe)
        except ArithmeticError:
            pass
    return chosen.network, rec


def perturbation_curve(
    net: Network,
    k: int,
    data,
    steps: int,
    gamma: float,
    use_adjustment: bool,
    probe,
    *,
    guards: bool = True,
    sample_budget: int | None = None,
    jitter: float = DEFAULT_JITTER,
) -> list[float]:
    """Relative change of the consumer's pre-activation after each of ``steps`` shrink calls.

    Each value compares against the original network, so the curve is cumulative.
    Stops early once the layer cannot shrink further.
    """
    k_next = net.consumer_of(k)
    current = net
    curve = []
    for i in range(steps):
        current, rec = lre_shrink(
            current, k, gamma, use_adjustment, data,
            guards=guards, sample_budget=sample_budget, jitter=jitter, step=i,
        )
        if rec.noop:
            break
        curve.append(preactivation_perturbation(net, current, k_next, probe))
    return curve


# -- schedules -------------------------------------------------------------------


@dataclass
class ScheduleResult:
    network: Network
    records: list[ShrinkRecord]
    baseline_accuracy: float
    final_accuracy: float
    baseline_params: tuple[int, int, int]
    final_params: tuple[int, int, int]

    @property
    def accepted(self) -> list[ShrinkRecord]:
        return [r for r in self.records if r.accepted]


def _splits(data: LabeledDataset, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    held = data.heldout
    if len(held) == 0:
        data = data.with_splits(heldout=0.2, seed=seed)
        held = data.heldout
    return data.train, held


def run_schedule(net: Network, data: LabeledDataset, cfg: AMCConfig) -> ScheduleResult:
    """Compress ``net`` layer by layer, keeping held-out accuracy within ``epsilon`` of the input net.

    ``top_down`` shrinks the penultimate layer repeatedly until a step cannot
    be brought back within tolerance (that step is rolled back), then moves
    to the layer below. ``round_robin`` makes one shrink attempt per layer per
    pass and stops after a pass in which every attempt was rolled back.
    """
    teacher = net.copy()
    train, heldout = _splits(data, cfg.seed)
    probe = heldout.inputs[:PROBE_SIZE]
    rng = np.random.default_rng(cfg.seed)
    baseline = evaluate(teacher, heldout)
    baseline_params = count_params(teacher)
    current, current_acc = teacher.copy(), baseline
    records: list[ShrinkRecord] = []

    def attempt(k: int) -> bool:
        nonlocal current, current_acc
        if current.units(k) < 2:
            return False
        cand, rec = lre_shrink(
            current, k, cfg.gamma, cfg.use_adjustment, train,
            guards=cfg.guards, sample_budget=cfg.sample_budget, jitter=cfg.jitter,
            probe=probe, step=len(records),
        )
        if rec.noop:
            return False
        rec.accuracy_before = current_acc
        rec.params_before = count_params(current)[0]
        acc = evaluate(cand, heldout)
        if baseline - acc > cfg.epsilon:
            tuned = fine_tune(cand, teacher, train, heldout, cfg, baseline, rng)
            cand, acc = tuned.network, tuned.accuracy
            rec.fine_tuned = True
        rec.accuracy_after = acc
        rec.params_after = count_params(cand)[0]
        rec.accepted = baseline - acc <= cfg.epsilon
        records.append(rec)
        log.info(
            "step %d layer %d: %d -> %d units, acc %.4f%s",
            rec.step, k, rec.units_before, rec.units_after, acc, "" if rec.accepted else " (rolled back)",
        )
        if rec.accepted:
            current, current_acc = cand, acc
        return rec.accepted

    layers = list(reversed(current.prunable_indices()))
    if cfg.schedule == "top_down":
        for k in layers:
            while attempt(k):
                pass
    else:
        while any([attempt(k) for k in layers]):
            pass
    return ScheduleResult(current, records, baseline, current_acc, baseline_params, count_params(current))


def compression_summary(result: ScheduleResult) -> dict:
    """Percent reduction of total/dense/conv parameters and accuracy drop in points."""
    def pct(before, after):
        return 100.0 * (before - after) / before if before else 0.0

    (t0, d0, c0), (t1, d1, c1) = result.baseline_params, result.final_params
    return {
        "delta_total_pct": pct(t0, t1),
        "delta_dense_pct": pct(d0, d1),
        "delta_conv_pct": pct(c0, c1),
        "delta_acc_pct": 100.0 * (result.baseline_accuracy - result.final_accuracy),
    }


def tolerance_sweep(net: Network, data: LabeledDataset, cfg: AMCConfig, epsilons) -> list[dict]:
    """One full schedule per tolerance, all from the same teacher."""
    epsilons = [float(e) for e in epsilons]
    if not epsilons:
        raise ValueError("no tolerances given")
    if any(b > a for a, b in zip(epsilons, epsilons[1:])):
        raise ValueError("tolerances must be sorted in descending order")
    rows = []
    for eps in epsilons:
        run_cfg = AMCConfig(**{**asdict(cfg), "epsilon": eps})
        summary = compression_summary(run_schedule(net, data, run_cfg))
        rows.append(
            {"epsilon": eps, "delta_params_pct": summary["delta_total_pct"], "delta_acc_pct": summary["delta_acc_pct"]}
        )
    return rows
