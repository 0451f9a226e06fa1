"""Layer types with explicit forward/backward passes.

Each layer maps a batch-major array to a batch-major array. ``forward``
returns the output together with whatever the matching ``backward`` needs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, ClassVar

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError


class Layer:
    kind: ClassVar[str] = ""
    parametric: ClassVar[bool] = False

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, Any]:
        raise NotImplementedError

    def backward(self, grad: np.ndarray, cache: Any) -> tuple[np.ndarray, dict | None]:
        raise NotImplementedError

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        raise NotImplementedError

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def copy(self) -> "Layer":
        return self

    def astype(self, dtype) -> "Layer":
        return self


@dataclass(eq=False)
class Dense(Layer):
    """Fully connected layer, ``y = x @ W.T + b`` with ``W`` of shape (out, in)."""

    weight: np.ndarray
    bias: np.ndarray
    kind: ClassVar[str] = "dense"
    parametric: ClassVar[bool] = True

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"bad dense shapes {self.weight.shape}, {self.bias.shape}")

    @property
    def units(self) -> int:
        return self.weight.shape[0]

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.weight.shape[1]:
            raise ShapeError(f"dense expects (batch, {self.weight.shape[1]}), got {x.shape}")
        return x @ self.weight.T + self.bias, x

    def backward(self, grad, cache):
        x = cache
        grads = {"weight": grad.T @ x, "bias": grad.sum(axis=0)}
        return grad @ self.weight, grads

    def output_shape(self, in_shape):
        if in_shape != (self.weight.shape[1],):
            raise ShapeError(f"dense expects input shape ({self.weight.shape[1]},), got {in_shape}")
        return (self.weight.shape[0],)

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def copy(self):
        return Dense(self.weight.copy(), self.bias.copy())

    def astype(self, dtype):
        return Dense(self.weight.astype(dtype), self.bias.astype(dtype))


def _conv_out(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """(N, C, H, W) -> (N*Ho*Wo, C*kh*kw) patch matrix."""
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)


def col2im(cols: np.ndarray, x_shape, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    n, c, h, w = x_shape
    ho, wo = _conv_out(h, kh, stride, pad), _conv_out(w, kw, stride, pad)
    cols = cols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, :, i, j]
    return out[:, :, pad : pad + h, pad : pad + w]


@dataclass(eq=False)
class Conv2d(Layer):
    weight: np.ndarray  # (out, in, kh, kw)
    bias: np.ndarray
    stride: int = 1
    padding: int = 0
    kind: ClassVar[str] = "conv2d"
    parametric: ClassVar[bool] = True

    def __post_init__(self):
        if self.weight.ndim != 4 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"bad conv shapes {self.weight.shape}, {self.bias.shape}")
        if self.stride < 1 or self.padding < 0:
            raise ShapeError("conv stride must be >= 1 and padding >= 0")

    @property
    def units(self) -> int:
        return self.weight.shape[0]

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.weight.shape[1]:
            raise ShapeError(f"conv expects (batch, {self.weight.shape[1]}, H, W), got {x.shape}")
        o, _, kh, kw = self.weight.shape
        n, _, h, w = x.shape
        ho = _conv_out(h, kh, self.stride, self.padding)
        wo = _conv_out(w, kw, self.stride, self.padding)
        cols = im2col(x, kh, kw, self.stride, self.padding)
        out = cols @ self.weight.reshape(o, -1).T + self.bias
        return out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2), (x.shape, cols)

    def backward(self, grad, cache):
        x_shape, cols = cache
        o, _, kh, kw = self.weight.shape
        g = grad.transpose(0, 2, 3, 1).reshape(-1, o)
        grads = {
            "weight": (g.T @ cols).reshape(self.weight.shape),
            "bias": g.sum(axis=0),
        }
        dcols = g @ self.weight.reshape(o, -1)
        return col2im(dcols, x_shape, kh, kw, self.stride, self.padding), grads

    def output_shape(self, in_shape):
        o, c, kh, kw = self.weight.shape
        if len(in_shape) != 3 or in_shape[0] != c:
            raise ShapeError(f"conv expects ({c}, H, W) input, got {in_shape}")
        ho = _conv_out(in_shape[1], kh, self.stride, self.padding)
        wo = _conv_out(in_shape[2], kw, self.stride, self.padding)
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv output would be empty for input {in_shape}")
        return (o, ho, wo)

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def copy(self):
        return Conv2d(self.weight.copy(), self.bias.copy(), self.stride, self.padding)

    def astype(self, dtype):
        return Conv2d(self.weight.astype(dtype), self.bias.astype(dtype), self.stride, self.padding)


@dataclass(eq=False)
class ReLU(Layer):
    kind: ClassVar[str] = "relu"

    def forward(self, x):
        return np.maximum(x, 0), x > 0

    def backward(self, grad, cache):
        return grad * cache, None

    def output_shape(self, in_shape):
        return in_shape


@dataclass(eq=False)
class MaxPool(Layer):
    window: int = 2
    stride: int = 2
    kind: ClassVar[str] = "maxpool"

    def forward(self, x):
        k, s = self.window, self.stride
        n, c, h, w = x.shape
        win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        flat = win.reshape(*win.shape[:4], k * k)
        arg = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
        return out, (x.shape, arg)

    def backward(self, grad, cache):
        x_shape, arg = cache
        k, s = self.window, self.stride
        ho, wo = arg.shape[2], arg.shape[3]
        dx = np.zeros(x_shape, dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                mask = arg == i * k + j
                dx[:, :, i : i + s * ho : s, j : j + s * wo : s] += grad * mask
        return dx, None

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"maxpool expects (C, H, W), got {in_shape}")
        c, h, w = in_shape
        ho = (h - self.window) // self.stride + 1
        wo = (w - self.window) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"maxpool window {self.window} too large for {in_shape}")
        return (c, ho, wo)


@dataclass(eq=False)
class Flatten(Layer):
    kind: ClassVar[str] = "flatten"

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, grad, cache):
        return grad.reshape(cache), None

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)


LAYER_KINDS = {cls.kind: cls for cls in (Dense, Conv2d, ReLU, MaxPool, Flatten)}
