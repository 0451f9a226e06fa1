"""``lre-prune`` command line: train, compress, sweep, eval, project.

Exit codes: 0 success, 2 configuration error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from .amc import run_schedule, tolerance_sweep
from .config import JobConfig, load_config, load_dataset
from .errors import ConfigError, LREError, ShapeError
from .modelio import atomic_write, load, save
from .network import build_network, count_params, evaluate, fit
from .report import build_report, cluster_separation, dumps_report, perturbation_csv, project, steps_jsonl

log = logging.getLogger("lre_prune")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _params(net) -> dict:
    total, dense, conv = count_params(net)
    return {"total": total, "dense": dense, "conv": conv}


def _eval_split(data):
    return data.test if len(data.test) else data.heldout


def _load_model(path):
    if path is None:
        raise ConfigError("--model is required for this command")
    if not Path(path).exists():
        raise ConfigError(f"model file {path} not found")
    return load(path)


def cmd_train(cfg: JobConfig, args) -> dict:
    data = load_dataset(cfg)
    try:
        net = build_network(cfg.layers, data.input_shape, data.class_count, seed=cfg.seed)
    except ShapeError as exc:
        raise ConfigError(f"[model] {exc}") from exc
    net, losses = fit(net, data.train, cfg.train)
    metrics = {
        "accuracy": evaluate(net, _eval_split(data)),
        "heldout_accuracy": evaluate(net, data.heldout) if len(data.heldout) else None,
        "train_accuracy": evaluate(net, data.train),
        "final_loss": losses[-1] if losses else None,
        "params": _params(net),
        "seed": cfg.seed,
    }
    save(net, args.out / "model.lre")
    atomic_write(args.out / "metrics.json", _json(metrics))
    return metrics


def cmd_eval(cfg: JobConfig, args) -> dict:
    net = _load_model(args.model)
    data = load_dataset(cfg)
    metrics = {"accuracy": evaluate(net, _eval_split(data)), "params": _params(net)}
    atomic_write(args.out / "eval.json", _json(metrics))
    return metrics


def cmd_compress(cfg: JobConfig, args) -> dict:
    net = _load_model(args.model)
    data = load_dataset(cfg)
    result = run_schedule(net, data, cfg.amc)
    test = {}
    if len(data.test):
        test = {"baseline": evaluate(net, data.test), "final": evaluate(result.network, data.test)}
    report = build_report(result, {"amc": asdict(cfg.amc), "data": cfg.data}, cfg.seed, test or None)
    save(result.network, args.out / "compressed.lre")
    atomic_write(args.out / "report.json", dumps_report(report))
    atomic_write(args.out / "steps.jsonl", steps_jsonl(report))
    atomic_write(args.out / "perturbation.csv", perturbation_csv(report))
    return report["summary"]


def parse_epsilons(text: str) -> list[float]:
    try:
        eps = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"--epsilons must be a comma-separated list of numbers, got {text!r}") from None
    if not eps or any(e < 0 for e in eps):
        raise ConfigError("--epsilons must list non-negative tolerances")
    if any(b > a for a, b in zip(eps, eps[1:])):
        raise ConfigError("--epsilons must be in descending order")
    return eps


def cmd_sweep(cfg: JobConfig, args) -> dict:
    if not args.epsilons:
        raise ConfigError("--epsilons is required for sweep")
    eps = parse_epsilons(args.epsilons)
    net = _load_model(args.model)
    rows = tolerance_sweep(net, load_dataset(cfg), cfg.amc, eps)
    lines = ["epsilon,delta_params_pct,delta_acc_pct"]
    lines += [f"{r['epsilon']!r},{r['delta_params_pct']!r},{r['delta_acc_pct']!r}" for r in rows]
    atomic_write(args.out / "sweep.csv", "\n".join(lines) + "\n")
    return {"rows": rows}


def cmd_project(cfg: JobConfig, args) -> dict:
    net = _load_model(args.model)
    if args.layer is None:
        raise ConfigError("--layer is required for project")
    if not 0 <= args.layer < len(net.layers) or not net.layers[args.layer].parametric:
        raise ConfigError(f"--layer {args.layer} is not a dense/conv layer of the model")
    data = _eval_split(load_dataset(cfg))
    proj = project(net, data, args.layer)
    atomic_write(args.out / "projection.csv", proj.to_csv())
    gap, spread = cluster_separation(proj.coords, proj.labels)
    return {"explained_variance": list(proj.explained_variance), "min_centroid_distance": gap, "mean_spread": spread}


COMMANDS = {
    "train": cmd_train,
    "compress": cmd_compress,
    "sweep": cmd_sweep,
    "eval": cmd_eval,
    "project": cmd_project,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lre-prune", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="TOML job configuration")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", type=Path, default=Path("."), help="output directory")
    parser.add_argument("--model", help="model file (compress, sweep, eval, project)")
    parser.add_argument("--epsilons", help="sweep tolerances, descending, e.g. 0.05,0.03,0")
    parser.add_argument("--layer", type=int, help="layer index to project")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _thread_limit():
    value = os.environ.get("LRE_PRUNE_THREADS")
    if not value:
        return contextlib.nullcontext()
    try:
        n = int(value)
    except ValueError:
        raise ConfigError(f"LRE_PRUNE_THREADS must be an integer, got {value!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(n, 1))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.seed)
        with _thread_limit():
            result = COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"lre-prune: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LREError, OSError, ArithmeticError) as exc:
        print(f"lre-prune: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(_json(result), end="")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
