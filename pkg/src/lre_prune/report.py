"""Compression reports and 2-D PCA projections."""

from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np

from .amc import ScheduleResult, compression_summary
from .errors import DataFormatError
from .modelio import atomic_write
from .network import Network, forward

REPORT_VERSION = 1
SUMMARY_KEYS = ("delta_total_pct", "delta_dense_pct", "delta_conv_pct", "delta_acc_pct")


def _counts(params) -> dict:
    total, dense, conv = params
    return {"total": int(total), "dense": int(dense), "conv": int(conv)}


def build_report(result: ScheduleResult, config: dict, seed: int, test_accuracy: dict | None = None) -> dict:
    """JSON-ready report; ``summary`` mirrors the total/dense/conv/accuracy reduction columns."""
    report = {
        "version": REPORT_VERSION,
        "seed": seed,
        "config": config,
        "baseline": {"accuracy": result.baseline_accuracy, "params": _counts(result.baseline_params)},
        "final": {"accuracy": result.final_accuracy, "params": _counts(result.final_params)},
        "steps": [r.to_json() for r in result.records],
        "summary": compression_summary(result),
        "perturbation": [
            {
                "step": r.step,
                "layer": r.layer,
                "adjusted": r.perturbation_adjusted,
                "unadjusted": r.perturbation_unadjusted,
            }
            for r in result.records
        ],
    }
    if test_accuracy is not None:
        report["test_accuracy"] = test_accuracy
    return report


def recompute_summary(report: dict) -> dict:
    def pct(key):
        before = report["baseline"]["params"][key]
        after = report["final"]["params"][key]
        return 100.0 * (before - after) / before if before else 0.0

    accepted = [s for s in report["steps"] if s["accepted"]]
    final_total = accepted[-1]["params_after"] if accepted else report["baseline"]["params"]["total"]
    if final_total != report["final"]["params"]["total"]:
        raise DataFormatError("final parameter count disagrees with the last accepted step")
    final_acc = accepted[-1]["accuracy_after"] if accepted else report["baseline"]["accuracy"]
    if final_acc != report["final"]["accuracy"]:
        raise DataFormatError("final accuracy disagrees with the last accepted step")
    return {
        "delta_total_pct": pct("total"),
        "delta_dense_pct": pct("dense"),
        "delta_conv_pct": pct("conv"),
        "delta_acc_pct": 100.0 * (report["baseline"]["accuracy"] - report["final"]["accuracy"]),
    }


def check_report(report: dict) -> None:
    """Raise :class:`DataFormatError` unless the summary is reproducible from the rest of the report."""
    expected = recompute_summary(report)
    for key in SUMMARY_KEYS:
        if report["summary"][key] != expected[key]:
            raise DataFormatError(f"summary field {key} is {report['summary'][key]}, recomputed {expected[key]}")
    for key in SUMMARY_KEYS[:3]:
        if not 0.0 <= report["summary"][key] <= 100.0:
            raise DataFormatError(f"summary field {key} outside [0, 100]")


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def write_report(report: dict, path) -> None:
    atomic_write(path, dumps_report(report))


def load_report(path) -> dict:
    with open(path) as fh:
        report = json.load(fh)
    check_report(report)
    return report


def steps_jsonl(report: dict) -> str:
    return "".join(json.dumps(s, sort_keys=True) + "\n" for s in report["steps"])


def perturbation_csv(report: dict) -> str:
    out = io.StringIO()
    out.write("step,layer,adjusted,unadjusted\n")
    for row in report["perturbation"]:
        vals = ["" if row[k] is None else repr(row[k]) for k in ("adjusted", "unadjusted")]
        out.write(f"{row['step']},{row['layer']},{vals[0]},{vals[1]}\n")
    return out.getvalue()


# -- PCA -------------------------------------------------------------------------


@dataclass
class PcaProjection:
    layer_index: int
    coords: np.ndarray  # (N, 2)
    labels: np.ndarray
    explained_variance: tuple[float, float]

    def to_csv(self) -> str:
        out = io.StringIO()
        v1, v2 = self.explained_variance
        out.write(f"# layer={self.layer_index} explained_variance={v1!r},{v2!r}\n")
        out.write("x,y,label\n")
        for (x, y), lab in zip(self.coords, self.labels):
            out.write(f"{float(x)!r},{float(y)!r},{int(lab)}\n")
        return out.getvalue()


def pca_2d(features: np.ndarray) -> tuple[np.ndarray, tuple[float, float]]:
    """Centre ``features`` (N, D) and project on the top two right singular vectors.

    Signs are fixed so the largest-magnitude loading of each component is
    positive. Missing components (D < 2 or rank < 2) project to zero.
    """
    X = np.asarray(features, dtype=np.float64).reshape(len(features), -1)
    X = X - X.mean(axis=0)
    _, s, vt = np.linalg.svd(X, full_matrices=False)
    comps = np.zeros((2, X.shape[1]))
    var = np.zeros(2)
    r = min(2, len(s))
    comps[:r] = vt[:r]
    var[:r] = s[:r] ** 2 / max(len(X) - 1, 1)
    for i in range(r):
        if comps[i, np.argmax(np.abs(comps[i]))] < 0:
            comps[i] = -comps[i]
    return X @ comps.T, (float(var[0]), float(var[1]))


def layer_features(net: Network, k: int, inputs: np.ndarray, batch_size: int = 512) -> np.ndarray:
    chunks = []
    for s in range(0, len(inputs), batch_size):
        _, (cap,) = forward(net, inputs[s : s + batch_size], capture=[k])
        chunks.append(cap.post_activation.reshape(cap.post_activation.shape[0], -1))
    return np.concatenate(chunks).astype(np.float64)


def project(net: Network, data, k: int) -> PcaProjection:
    coords, var = pca_2d(layer_features(net, k, np.asarray(data.inputs)))
    return PcaProjection(k, coords, np.asarray(data.labels), var)


def cluster_separation(coords: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """(smallest pairwise centroid distance, mean distance of points to their centroid)."""
    classes = np.unique(labels)
    centroids = np.array([coords[labels == c].mean(axis=0) for c in classes])
    spread = np.mean([np.linalg.norm(coords[labels == c] - centroids[i], axis=1).mean() for i, c in enumerate(classes)])
    d = np.linalg.norm(centroids[:, None] - centroids[None], axis=-1)
    d = d[np.triu_indices(len(classes), 1)]
    return float(d.min()), float(spread)
