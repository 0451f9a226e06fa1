"""Datasets: synthetic blobs, IDX/CSV loaders and planted-redundancy fixtures."""

from __future__ import annotations

import csv
import gzip
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataFormatError, ShapeError
from .layers import Conv2d, Dense
from .network import Network

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

SPLITS = ("train", "heldout", "test")


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Inputs (N, ...) with integer labels and a split tag per sample."""

    inputs: np.ndarray
    labels: np.ndarray
    split: np.ndarray | None = None

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise ShapeError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")
        if self.split is None:
            object.__setattr__(self, "split", np.full(len(self.labels), "train", dtype="<U7"))
        elif len(self.split) != len(self.labels):
            raise ShapeError("split tags must match the number of samples")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def input_shape(self) -> tuple[int, ...]:
        return tuple(self.inputs.shape[1:])

    @property
    def class_count(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def subset(self, name: str) -> "LabeledDataset":
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        mask = self.split == name
        return LabeledDataset(self.inputs[mask], self.labels[mask], self.split[mask])

    @property
    def train(self) -> "LabeledDataset":
        return self.subset("train")

    @property
    def heldout(self) -> "LabeledDataset":
        return self.subset("heldout")

    @property
    def test(self) -> "LabeledDataset":
        return self.subset("test")

    def with_splits(self, heldout: float = 0.2, test: float = 0.0, seed: int = 0) -> "LabeledDataset":
        """Re-tag samples: a random ``test`` fraction, then ``heldout`` of what remains."""
        n = len(self)
        order = np.random.default_rng(seed).permutation(n)
        n_test = int(round(test * n))
        n_held = int(round(heldout * (n - n_test)))
        split = np.full(n, "train", dtype="<U7")
        split[order[:n_test]] = "test"
        split[order[n_test : n_test + n_held]] = "heldout"
        return LabeledDataset(self.inputs, self.labels, split)


def make_blobs(
    classes: int,
    dim: int,
    per_class: int,
    seed: int = 0,
    separation: float = 10.0,
    sigma: float = 1.0,
    shape: tuple[int, ...] | None = None,
    offset: float = 0.0,
) -> LabeledDataset:
    """Isotropic Gaussian clusters whose centres are ``separation`` apart.

    With ``classes <= dim`` the centres sit on orthogonal axes, so every pair
    of centres is exactly ``separation`` apart (in units of ``sigma``).
    ``shape`` reshapes each sample, e.g. to (C, H, W) images.
    """
    if classes < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(seed)
    if classes <= dim:
        q, _ = np.linalg.qr(rng.normal(size=(dim, classes)))
        centres = q.T
    else:
        centres = rng.normal(size=(classes, dim))
        centres /= np.linalg.norm(centres, axis=1, keepdims=True)
    centres = centres * (separation * sigma / math.sqrt(2.0)) + offset
    labels = np.repeat(np.arange(classes), per_class)
    x = centres[labels] + rng.normal(scale=sigma, size=(len(labels), dim))
    order = rng.permutation(len(labels))
    x, labels = x[order], labels[order]
    if shape is not None:
        if int(np.prod(shape)) != dim:
            raise ShapeError(f"shape {shape} does not hold {dim} features")
        x = x.reshape(len(labels), *shape)
    return LabeledDataset(x.astype(np.float32), labels.astype(np.int64))


# -- IDX -------------------------------------------------------------------

_IDX_TYPES = {0x08: np.uint8, 0x09: np.int8, 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}
_IDX_CODES = {np.dtype(np.uint8): 0x08, np.dtype(np.int8): 0x09}


def _open(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Read an IDX file (optionally gzipped) into an array of its stored type."""
    with _open(path) as fh:
        buf = fh.read()
    if len(buf) < 4 or buf[0] != 0 or buf[1] != 0:
        raise DataFormatError(f"{path}: bad IDX magic")
    code, ndim = buf[2], buf[3]
    if code not in _IDX_TYPES:
        raise DataFormatError(f"{path}: unknown IDX element type 0x{code:02x}")
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise DataFormatError(f"{path}: truncated IDX header")
    dims = tuple(int.from_bytes(buf[4 + 4 * i : 8 + 4 * i], "big") for i in range(ndim))
    dtype = np.dtype(_IDX_TYPES[code])
    need = int(np.prod(dims)) * dtype.itemsize
    if len(buf) - header != need:
        raise DataFormatError(f"{path}: expected {need} payload bytes for dims {dims}, found {len(buf) - header}")
    return np.frombuffer(buf, dtype=dtype, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    code = _IDX_CODES.get(array.dtype)
    if code is None:
        raise DataFormatError(f"cannot write dtype {array.dtype} as IDX")
    header = bytes([0, 0, code, array.ndim]) + b"".join(d.to_bytes(4, "big") for d in array.shape)
    Path(path).write_bytes(header + array.tobytes())


def normalize(images: np.ndarray, mean=None, std=None) -> np.ndarray:
    """Per-channel ``(x - mean) / std`` over axis 1 of an (N, C, H, W) array."""
    c = images.shape[1]
    if mean is None:
        mean = IMAGENET_MEAN if c == 3 else (0.0,) * c
    if std is None:
        std = IMAGENET_STD if c == 3 else (1.0,) * c
    mean = np.asarray(mean, dtype=np.float32).reshape(1, c, 1, 1)
    std = np.asarray(std, dtype=np.float32).reshape(1, c, 1, 1)
    return (images - mean) / std


def load_idx(images_path, labels_path, mean=None, std=None, flatten: bool = False) -> LabeledDataset:
    """Load an IDX image/label pair.

    Pixels are scaled to [0, 1] and normalised per channel. 3-D image files
    are single-channel (N, H, W); 4-D files are read as (N, C, H, W).
    """
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim not in (3, 4):
        raise DataFormatError(f"{images_path}: expected 3 or 4 dimensions, got {images.ndim}")
    if labels.ndim != 1:
        raise DataFormatError(f"{labels_path}: labels must be 1-D")
    if len(labels) != len(images):
        raise DataFormatError(f"label count {len(labels)} does not match image count {len(images)}")
    x = images.astype(np.float32) / 255.0
    if x.ndim == 3:
        x = x[:, None]
    x = normalize(x, mean, std).astype(np.float32)
    if flatten:
        x = x.reshape(len(x), -1)
    return LabeledDataset(x, labels.astype(np.int64))


def load_csv(path) -> LabeledDataset:
    """Load ``label,f0,f1,...`` rows."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "label" or any(h != f"f{i}" for i, h in enumerate(header[1:])):
            raise DataFormatError(f"{path}: header must be label,f0,f1,...")
        rows = [row for row in reader if row]
    try:
        arr = np.array(rows, dtype=np.float64)
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc
    if arr.ndim != 2 or arr.shape[1] != len(header):
        raise DataFormatError(f"{path}: ragged rows")
    return LabeledDataset(arr[:, 1:].astype(np.float32), arr[:, 0].astype(np.int64))


# -- planted redundancy ------------------------------------------------------

PLANT_MODES = ("auto", "scale", "nonneg", "linear")


@dataclass
class PlantSpec:
    """Unit ``r`` of layer ``layer`` becomes ``sum(c * unit_h)`` for ``deps[r] = {h: c}``.

    Modes: ``scale`` allows one positive source per unit (exact through ReLU
    and max-pooling); ``nonneg`` makes the source units' incoming weights and
    biases non-negative so they never leave ReLU's linear region (the layer's
    input must be non-negative); ``linear`` is for layers with no
    nonlinearity after them.
    """

    layer: int
    deps: dict[int, dict[int, float]]
    mode: str = "auto"
    removed: tuple[int, ...] = field(init=False)
    sources: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        if self.mode not in PLANT_MODES:
            raise ValueError(f"mode must be one of {PLANT_MODES}")
        self.deps = {int(r): {int(h): float(c) for h, c in d.items()} for r, d in self.deps.items()}
        self.removed = tuple(sorted(self.deps))
        self.sources = tuple(sorted({h for d in self.deps.values() for h in d}))
        if set(self.removed) & set(self.sources):
            raise ValueError("planted units cannot also be sources")
        for r, d in self.deps.items():
            if not d:
                raise ValueError(f"unit {r} has no sources")
            if not all(math.isfinite(c) for c in d.values()):
                raise ValueError(f"unit {r} has non-finite coefficients")


def _block_kinds(net: Network, k: int) -> list[str]:
    return [net.layers[i].kind for i in range(k + 1, net.activation_end(k) + 1)]


def plant_redundancy(net: Network, spec: PlantSpec) -> Network:
    """Return a copy of ``net`` where the planted units are exact combinations of their sources."""
    k = spec.layer
    layer = net.layers[k]
    if not isinstance(layer, (Dense, Conv2d)):
        raise ValueError(f"layer {k} is not dense/conv")
    n = layer.units
    if max(spec.removed + spec.sources) >= n or min(spec.removed + spec.sources) < 0:
        raise ValueError(f"unit ids out of range for layer with {n} units")
    block = _block_kinds(net, k)
    nonlinear = bool(block)
    coeffs = [c for d in spec.deps.values() for c in d.values()]
    single = all(len(d) == 1 for d in spec.deps.values())

    mode = spec.mode
    if mode == "auto":
        mode = "linear" if not nonlinear else "scale" if single else "nonneg"
    if mode == "linear" and nonlinear:
        raise ValueError(f"layer {k} is followed by {block}; 'linear' mode needs no nonlinearity")
    if mode in ("scale", "nonneg") and min(coeffs) < 0:
        raise ValueError("negative coefficients cannot pass exactly through ReLU")
    if mode == "scale" and not single:
        raise ValueError("'scale' mode allows a single source per planted unit")
    if mode == "nonneg" and "maxpool" in block:
        raise ValueError("max-pooling does not commute with sums; use single-source 'scale' mode")
    if mode == "nonneg":
        upstream = [i for i in net.parametric_indices() if i < k]
        if upstream and "relu" not in _block_kinds(net, upstream[-1]):
            raise ValueError("'nonneg' mode needs a non-negative layer input (no ReLU feeds this layer)")

    out = net.copy()
    w, b = out.layers[k].weight, out.layers[k].bias
    if mode == "nonneg":
        for h in spec.sources:
            w[h] = np.abs(w[h])
            b[h] = abs(b[h])
    for r in spec.removed:
        w[r] = sum(c * w[h] for h, c in spec.deps[r].items())
        b[r] = sum(c * b[h] for h, c in spec.deps[r].items())
    return out
