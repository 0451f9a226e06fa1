"""Structured pruning by linear redundancy elimination with distillation fine-tuning."""

from .amc import AMCConfig, ShrinkRecord, fine_tune, lre_shrink, run_schedule, tolerance_sweep
from .data import LabeledDataset, PlantSpec, make_blobs, plant_redundancy
from .network import Network, TrainConfig, build_network, count_params, evaluate, forward, train
from .pruner import build_transformation, guard_update, prune_layer
from .redundancy import RedundancyAnalysis, analyze, closed_form_A, gd_A, rank_units

__version__ = "0.1.0"

__all__ = [
    "AMCConfig",
    "LabeledDataset",
    "Network",
    "PlantSpec",
    "RedundancyAnalysis",
    "ShrinkRecord",
    "TrainConfig",
    "analyze",
    "build_network",
    "build_transformation",
    "closed_form_A",
    "count_params",
    "evaluate",
    "fine_tune",
    "forward",
    "gd_A",
    "guard_update",
    "lre_shrink",
    "make_blobs",
    "plant_redundancy",
    "prune_layer",
    "rank_units",
    "run_schedule",
    "tolerance_sweep",
    "train",
]
