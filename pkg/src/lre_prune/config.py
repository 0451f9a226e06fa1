"""TOML job configuration.

Example::

    seed = 0

    [data]
    kind = "blobs"          # blobs | idx | csv
    classes = 10
    dim = 32
    per_class = 400
    separation = 6.0
    heldout = 0.2
    test = 0.2

    [model]
    layers = [
      { kind = "dense", out = 128 }, { kind = "relu" },
      { kind = "dense" },
    ]

    [train]
    learning_rate = 0.05
    max_epochs = 20

    [amc]
    epsilon = 0.05
    schedule = "top_down"
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .amc import AMCConfig
from .data import LabeledDataset, load_csv, load_idx, make_blobs
from .errors import ConfigError, DataFormatError
from .network import TrainConfig

DATA_KINDS = ("blobs", "idx", "csv")


@dataclass
class JobConfig:
    seed: int
    data: dict
    layers: list[dict]
    train: TrainConfig
    amc: AMCConfig
    base_dir: Path = field(default_factory=Path.cwd)
    raw: dict = field(default_factory=dict)


def _section(raw: dict, name: str) -> dict:
    value = raw.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"[{name}] must be a table")
    return value


def _dataclass_from(cls, values: dict, section: str, **overrides):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"[{section}] unknown field(s): {', '.join(sorted(unknown))}")
    try:
        return cls(**{**values, **overrides})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


def parse_config(raw: dict, base_dir=".", seed: int | None = None) -> JobConfig:
    if seed is None:
        seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer")
    data = dict(_section(raw, "data"))
    kind = data.get("kind", "blobs")
    if kind not in DATA_KINDS:
        raise ConfigError(f"[data] kind must be one of {DATA_KINDS}, got {kind!r}")
    data["kind"] = kind
    model = _section(raw, "model")
    layers = model.get("layers")
    if not isinstance(layers, list) or not layers or not all(isinstance(l, dict) for l in layers):
        raise ConfigError("[model] layers must be a non-empty list of tables")
    train = _dataclass_from(TrainConfig, _section(raw, "train"), "train", seed=seed)
    amc = _dataclass_from(AMCConfig, _section(raw, "amc"), "amc", seed=seed)
    return JobConfig(seed, data, layers, train, amc, Path(base_dir), raw)


def load_config(path, seed: int | None = None) -> JobConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(raw, path.parent, seed)


def _path(cfg: JobConfig, key: str) -> Path:
    value = cfg.data.get(key)
    if not isinstance(value, str):
        raise ConfigError(f"[data] {key} must be a path string")
    p = Path(value)
    if not p.is_absolute():
        p = cfg.base_dir / p
    if not p.exists():
        raise ConfigError(f"[data] {key}: {p} does not exist")
    return p


def load_dataset(cfg: JobConfig) -> LabeledDataset:
    d = cfg.data
    data_seed = d.get("seed", cfg.seed)
    try:
        if d["kind"] == "blobs":
            shape = d.get("shape")
            ds = make_blobs(
                classes=int(d.get("classes", 10)),
                dim=int(d.get("dim", 32)),
                per_class=int(d.get("per_class", 400)),
                seed=int(data_seed),
                separation=float(d.get("separation", 10.0)),
                sigma=float(d.get("sigma", 1.0)),
                shape=tuple(shape) if shape else None,
            )
        elif d["kind"] == "idx":
            ds = load_idx(
                _path(cfg, "images"), _path(cfg, "labels"),
                mean=d.get("mean"), std=d.get("std"), flatten=bool(d.get("flatten", False)),
            )
        else:
            ds = load_csv(_path(cfg, "path"))
    except (ConfigError, DataFormatError):
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[data] {exc}") from exc
    return ds.with_splits(heldout=float(d.get("heldout", 0.2)), test=float(d.get("test", 0.2)), seed=int(data_seed))
