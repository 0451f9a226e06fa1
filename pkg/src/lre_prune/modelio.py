"""Binary model files.

Layout (all integers u32 little-endian, all scalars float32 little-endian)::

    b"LREPRUNE" | version | layer_count | class_count | ndim | dims[ndim]
    then per layer: type tag, then
      dense   (1): out, in, weight[out*in], bias[out]
      conv2d  (2): out, in, kh, kw, stride, padding, weight[...], bias[out]
      relu    (3): -
      maxpool (4): window, stride
      flatten (5): -
"""

from __future__ import annotations

import io
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import ModelFormatError, ShapeError, UnsupportedVersionError
from .layers import Conv2d, Dense, Flatten, MaxPool, ReLU
from .network import Network

MAGIC = b"LREPRUNE"
VERSION = 1
_TAGS = {"dense": 1, "conv2d": 2, "relu": 3, "maxpool": 4, "flatten": 5}
_F32 = np.dtype("<f4")


def _u32(*values: int) -> bytes:
    return struct.pack(f"<{len(values)}I", *values)


def _scalars(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype=_F32).tobytes()


def dumps(net: Network) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(_u32(VERSION, len(net.layers), net.class_count, len(net.input_shape), *net.input_shape))
    for layer in net.layers:
        out.write(_u32(_TAGS[layer.kind]))
        if isinstance(layer, Dense):
            out.write(_u32(*layer.weight.shape))
            out.write(_scalars(layer.weight) + _scalars(layer.bias))
        elif isinstance(layer, Conv2d):
            out.write(_u32(*layer.weight.shape, layer.stride, layer.padding))
            out.write(_scalars(layer.weight) + _scalars(layer.bias))
        elif isinstance(layer, MaxPool):
            out.write(_u32(layer.window, layer.stride))
    return out.getvalue()


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ModelFormatError(f"truncated model file: wanted {n} bytes at offset {self.pos}")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32s(self, count: int) -> tuple[int, ...]:
        return struct.unpack(f"<{count}I", self.take(4 * count))

    def u32(self) -> int:
        return self.u32s(1)[0]

    def floats(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return np.frombuffer(self.take(4 * n), dtype=_F32).astype(np.float32).reshape(shape)


def loads(buf: bytes) -> Network:
    r = _Reader(buf)
    if r.take(len(MAGIC)) != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise UnsupportedVersionError(f"model file version {version} is not supported (expected {VERSION})")
    n_layers, class_count, ndim = r.u32s(3)
    input_shape = r.u32s(ndim)
    layers = []
    for i in range(n_layers):
        tag = r.u32()
        if tag == 1:
            o, n_in = r.u32s(2)
            layers.append(Dense(r.floats((o, n_in)), r.floats((o,))))
        elif tag == 2:
            o, c, kh, kw, stride, pad = r.u32s(6)
            layers.append(Conv2d(r.floats((o, c, kh, kw)), r.floats((o,)), stride, pad))
        elif tag == 3:
            layers.append(ReLU())
        elif tag == 4:
            window, stride = r.u32s(2)
            layers.append(MaxPool(window, stride))
        elif tag == 5:
            layers.append(Flatten())
        else:
            raise ModelFormatError(f"layer {i}: unknown type tag {tag}")
    if r.pos != len(buf):
        raise ModelFormatError(f"{len(buf) - r.pos} trailing bytes after layer table")
    try:
        return Network(layers, input_shape, class_count)
    except ShapeError as exc:
        raise ModelFormatError(f"inconsistent layer table: {exc}") from exc


def atomic_write(path, data: bytes | str) -> None:
    """Write via a temporary file in the same directory and rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(net: Network, path) -> None:
    atomic_write(path, dumps(net))


def load(path) -> Network:
    return loads(Path(path).read_bytes())
