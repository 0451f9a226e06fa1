"""Shared fixture builders for the test-suite (not collected by pytest)."""

from __future__ import annotations

import numpy as np

from lre_prune.data import LabeledDataset, PlantSpec, plant_redundancy
from lre_prune.layers import Dense, ReLU
from lre_prune.network import Network, build_network, forward, predict_logits

MLP_DEPS = {3: {1: 1.0}, 7: {2: 0.5, 5: 0.5}, 9: {4: 2.0}, 11: {6: 0.3, 8: 0.7}}
CONV_DEPS = {5: {2: 1.0}, 9: {4: 1.0}, 12: {1: 1.0}}


def uniform_inputs(n: int, shape, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).uniform(0.0, 1.0, size=(n, *shape)).astype(np.float32)


def normal_inputs(n: int, shape, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).normal(size=(n, *shape)).astype(np.float32)


def scale_weights(net: Network, factor: float) -> Network:
    for layer in net.layers:
        if layer.parametric:
            layer.weight *= factor
    return net


def teacher_labelled(net: Network, inputs: np.ndarray) -> LabeledDataset:
    labels = predict_logits(net, inputs).argmax(axis=1)
    return LabeledDataset(inputs, labels.astype(np.int64))


def planted_mlp(seed: int = 0, width: int = 64, in_dim: int = 16, classes: int = 10, scale: float = 0.5, dtype=np.float32):
    """Three hidden ReLU layers of ``width`` units; layer 2 carries four planted dependencies."""
    arch = []
    for _ in range(3):
        arch += [{"kind": "dense", "out": width}, {"kind": "relu"}]
    arch.append({"kind": "dense"})
    net = scale_weights(build_network(arch, (in_dim,), classes, seed=seed, dtype=dtype), scale)
    rng = np.random.default_rng(seed + 1)
    for k in (0, 2):
        net.layers[k].bias[:] = rng.uniform(0.0, 0.1, size=width)
    spec = PlantSpec(2, MLP_DEPS, mode="nonneg")
    net = plant_redundancy(net, spec)
    revive_units(net, normal_inputs(2000, (in_dim,), seed + 1000), 4)
    return net, spec


def revive_units(net: Network, ref: np.ndarray, k: int, min_active: float = 0.1) -> None:
    """Raise the bias of units of layer ``k`` active on under ``min_active`` of ``ref``."""
    _, (cap,) = forward(net, ref, capture=[k])
    pre = cap.pre_activation
    rarely = (pre > 0).mean(axis=0) < min_active
    bias = net.layers[k].bias
    bias[rarely] -= np.median(pre[:, rarely], axis=0)


def planted_conv(seed: int = 0, channels: int = 16, classes: int = 10, scale: float = 0.7):
    """conv-relu-pool-conv-relu-flatten-dense with duplicated channels in the first conv."""
    arch = [
        {"kind": "conv2d", "out": channels, "kernel": 3, "padding": 1},
        {"kind": "relu"},
        {"kind": "maxpool", "window": 2},
        {"kind": "conv2d", "out": channels, "kernel": 3, "padding": 1},
        {"kind": "relu"},
        {"kind": "flatten"},
        {"kind": "dense"},
    ]
    net = scale_weights(build_network(arch, (3, 8, 8), classes, seed=seed), scale)
    spec = PlantSpec(0, CONV_DEPS, mode="scale")
    return plant_redundancy(net, spec), spec


def smooth_images(classes: int = 10, per_class: int = 100, grid: int = 2, size: int = 8, noise: float = 0.01, seed: int = 0):
    """Blob clusters on a coarse ``grid`` x ``grid`` RGB lattice, bilinearly upsampled to ``size``.

    Neighbouring pixels are strongly correlated, as in natural images.
    """
    from scipy.ndimage import zoom

    from lre_prune.data import make_blobs

    b = make_blobs(classes, 3 * grid * grid, per_class, seed=seed, separation=6.0, shape=(3, grid, grid))
    x = zoom(b.inputs, (1, 1, size / grid, size / grid), order=1)
    x = x + noise * np.random.default_rng(seed + 1).normal(size=x.shape)
    return LabeledDataset(x.astype(np.float32), b.labels)


def guard_net(scale_next: float) -> Network:
    """Identity dense layer of 3 units feeding a single output that reads units 0 and 2."""
    w1 = scale_next * np.array([[1.0, 0.0, 1.0]])
    return Network([Dense(np.eye(3), np.zeros(3)), ReLU(), Dense(w1, np.zeros(1))], (3,), 1)
