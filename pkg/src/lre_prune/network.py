"""Feed-forward networks: forward/backward passes, SGD training, evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ShapeError, TrainingError
from .layers import LAYER_KINDS, Conv2d, Dense, Flatten, Layer, MaxPool, ReLU

log = logging.getLogger(__name__)

EVAL_BATCH = 1024


@dataclass(eq=False)
class Network:
    layers: list[Layer]
    input_shape: tuple[int, ...]
    class_count: int

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        self.layers = list(self.layers)
        if not any(layer.parametric for layer in self.layers):
            raise ShapeError("network needs at least one dense or conv layer")
        out = self.shapes()[-1]
        if out != (self.class_count,):
            raise ShapeError(f"network emits {out}, expected ({self.class_count},) logits")

    def shapes(self) -> list[tuple[int, ...]]:
        """Per-sample shapes: ``shapes()[i]`` is the input of layer ``i``; the last entry is the output."""
        shapes = [self.input_shape]
        for i, layer in enumerate(self.layers):
            try:
                shapes.append(tuple(layer.output_shape(shapes[-1])))
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from None
        return shapes

    @property
    def dtype(self):
        return self.layers[self.parametric_indices()[0]].weight.dtype

    def parametric_indices(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if layer.parametric]

    def prunable_indices(self) -> list[int]:
        """Parametric layers that feed another parametric layer."""
        return self.parametric_indices()[:-1]

    def consumer_of(self, k: int) -> int:
        for j in range(k + 1, len(self.layers)):
            if self.layers[j].parametric:
                return j
        raise ShapeError(f"layer {k} has no parametric consumer")

    def activation_end(self, k: int) -> int:
        """Index of the layer whose output is Z_k (the block after ``k``, stopping before flatten)."""
        j = k
        while (
            j + 1 < len(self.layers)
            and not self.layers[j + 1].parametric
            and self.layers[j + 1].kind != "flatten"
        ):
            j += 1
        return j

    def units(self, k: int) -> int:
        layer = self.layers[k]
        if not layer.parametric:
            raise ShapeError(f"layer {k} ({layer.kind}) has no units")
        return layer.units

    def copy(self) -> "Network":
        return Network([layer.copy() for layer in self.layers], self.input_shape, self.class_count)

    def astype(self, dtype) -> "Network":
        return Network([layer.astype(dtype) for layer in self.layers], self.input_shape, self.class_count)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return forward(self, x)[0]


@dataclass
class ActivationCapture:
    layer_index: int
    pre_activation: np.ndarray
    post_activation: np.ndarray


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    batch_size: int = 64
    max_epochs: int = 20
    seed: int = 0
    momentum: float = 0.0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")


def _check_batch(net: Network, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch)
    if batch.shape[1:] != net.input_shape:
        raise ShapeError(f"batch shape {batch.shape} does not match input shape {net.input_shape}")
    return batch.astype(net.dtype, copy=False)


def forward(
    net: Network, batch: np.ndarray, capture: Iterable[int] = ()
) -> tuple[np.ndarray, list[ActivationCapture]]:
    """Run ``batch`` through ``net``; optionally capture Y_k and Z_k for parametric layers ``k``."""
    x = _check_batch(net, batch)
    capture = sorted(set(capture))
    for k in capture:
        if not (0 <= k < len(net.layers)) or not net.layers[k].parametric:
            raise ShapeError(f"cannot capture layer {k}: not a dense/conv layer")
    wanted = {}
    for k in capture:
        wanted.setdefault(k, []).append(("pre", k))
        wanted.setdefault(net.activation_end(k), []).append(("post", k))
    got: dict[int, dict[str, np.ndarray]] = {k: {} for k in capture}
    for i, layer in enumerate(net.layers):
        x, _ = layer.forward(x)
        for tag, k in wanted.get(i, ()):
            got[k][tag] = x
    caps = [ActivationCapture(k, got[k]["pre"], got[k]["post"]) for k in capture]
    return x, caps


def forward_train(net: Network, batch: np.ndarray) -> tuple[np.ndarray, list]:
    x = _check_batch(net, batch)
    caches = []
    for layer in net.layers:
        x, cache = layer.forward(x)
        caches.append(cache)
    return x, caches


def backward(net: Network, caches: list, dlogits: np.ndarray) -> list[dict | None]:
    grads: list[dict | None] = [None] * len(net.layers)
    g = dlogits
    for i in range(len(net.layers) - 1, -1, -1):
        g, grads[i] = net.layers[i].backward(g, caches[i])
    return grads


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient with respect to the logits."""
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1
    return float(loss), grad / n


LossGrad = Callable[[np.ndarray, np.ndarray], tuple[float, np.ndarray]]


def sgd_epoch(
    net: Network,
    inputs: np.ndarray,
    loss_grad: LossGrad,
    lr: float,
    batch_size: int,
    rng: np.random.Generator,
    velocity: list | None = None,
    momentum: float = 0.0,
) -> float:
    """One shuffled pass of minibatch SGD, updating ``net`` in place.

    ``loss_grad(logits, idx)`` returns the batch loss and dloss/dlogits for
    the samples ``idx``. Returns the sample-weighted mean loss.
    """
    n = inputs.shape[0]
    order = rng.permutation(n)
    total = 0.0
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        logits, caches = forward_train(net, inputs[idx])
        loss, dlogits = loss_grad(logits, idx)
        if not np.isfinite(loss):
            return float("nan")
        total += loss * len(idx)
        grads = backward(net, caches, dlogits.astype(logits.dtype, copy=False))
        for li, g in enumerate(grads):
            if g is None:
                continue
            layer = net.layers[li]
            for name, value in g.items():
                param = getattr(layer, name)
                if momentum and velocity is not None:
                    v = velocity[li].setdefault(name, np.zeros_like(param))
                    v *= momentum
                    v += value
                    value = v
                param -= (lr * value).astype(param.dtype, copy=False)
    return total / n


def fit(net: Network, data, cfg: TrainConfig) -> tuple[Network, list[float]]:
    """Train a private copy of ``net`` with softmax cross-entropy; return it with per-epoch losses."""
    if len(data.labels) == 0:
        raise ValueError("cannot train on an empty dataset")
    labels = np.asarray(data.labels)
    if labels.min() < 0 or labels.max() >= net.class_count:
        raise ValueError(f"labels must lie in [0, {net.class_count})")
    net = net.copy()
    inputs = np.asarray(data.inputs, dtype=net.dtype)
    rng = np.random.default_rng(cfg.seed)
    velocity = [dict() for _ in net.layers]

    def loss_grad(logits, idx):
        return cross_entropy(logits, labels[idx])

    losses = []
    for epoch in range(cfg.max_epochs):
        loss = sgd_epoch(net, inputs, loss_grad, cfg.learning_rate, cfg.batch_size, rng, velocity, cfg.momentum)
        if not np.isfinite(loss):
            raise TrainingError(f"training diverged (non-finite loss) in epoch {epoch}", iteration=epoch)
        losses.append(loss)
        log.debug("epoch %d loss %.5f", epoch, loss)
    return net, losses


def train(net: Network, data, cfg: TrainConfig) -> Network:
    return fit(net, data, cfg)[0]


def predict_logits(net: Network, inputs: np.ndarray, batch_size: int = EVAL_BATCH) -> np.ndarray:
    inputs = np.asarray(inputs)
    if inputs.shape[0] == 0:
        return np.zeros((0, net.class_count), dtype=net.dtype)
    return np.concatenate([forward(net, inputs[s : s + batch_size])[0] for s in range(0, len(inputs), batch_size)])


def evaluate(net: Network, data) -> float:
    labels = np.asarray(data.labels)
    if len(labels) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    pred = predict_logits(net, data.inputs).argmax(axis=1)
    return float(np.mean(pred == labels))


def count_params(net: Network) -> tuple[int, int, int]:
    """Return (total, dense, conv) parameter counts, biases included."""
    dense = conv = 0
    for layer in net.layers:
        size = sum(p.size for p in layer.params().values())
        if isinstance(layer, Dense):
            dense += size
        elif isinstance(layer, Conv2d):
            conv += size
    return dense + conv, dense, conv


def build_network(
    arch: Sequence[dict],
    input_shape: Sequence[int],
    class_count: int,
    seed: int = 0,
    dtype=np.float32,
) -> Network:
    """Build a network from a list of layer descriptions with He-normal weights.

    Recognised entries: ``{"kind": "dense", "out": n}``,
    ``{"kind": "conv2d", "out": c, "kernel": k, "stride": s, "padding": p}``,
    ``{"kind": "relu"}``, ``{"kind": "maxpool", "window": w, "stride": s}``,
    ``{"kind": "flatten"}``. A final dense layer may omit ``out``.
    """
    rng = np.random.default_rng(seed)
    shape = tuple(int(d) for d in input_shape)
    layers: list[Layer] = []
    for i, spec in enumerate(arch):
        kind = spec.get("kind")
        if kind not in LAYER_KINDS:
            raise ShapeError(f"layer {i}: unknown kind {kind!r}")
        if kind == "dense":
            if len(shape) != 1:
                raise ShapeError(f"layer {i}: dense layer needs flat input, got {shape}")
            out = int(spec.get("out", class_count))
            w = rng.normal(0.0, np.sqrt(2.0 / shape[0]), size=(out, shape[0]))
            layer: Layer = Dense(w.astype(dtype), np.zeros(out, dtype=dtype))
        elif kind == "conv2d":
            if len(shape) != 3:
                raise ShapeError(f"layer {i}: conv layer needs (C, H, W) input, got {shape}")
            k = int(spec.get("kernel", 3))
            out = int(spec["out"])
            fan_in = shape[0] * k * k
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(out, shape[0], k, k))
            layer = Conv2d(
                w.astype(dtype),
                np.zeros(out, dtype=dtype),
                stride=int(spec.get("stride", 1)),
                padding=int(spec.get("padding", 0)),
            )
        elif kind == "maxpool":
            window = int(spec.get("window", 2))
            layer = MaxPool(window, int(spec.get("stride", window)))
        elif kind == "relu":
            layer = ReLU()
        else:
            layer = Flatten()
        shape = tuple(layer.output_shape(shape))
        layers.append(layer)
    return Network(layers, input_shape, class_count)
