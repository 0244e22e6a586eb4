"""Rank-1 FNN: a one-hidden-layer classifier for tensor inputs whose hidden
weights are Kronecker products of per-mode vectors."""
from .data import LabeledDataset, extract_patches, generate_synthetic, per_class_split
from .model import DenseFNN, Rank1FNN, load_model, param_count, save_model
from .training import TrainConfig, TrainReport, train_dense, train_rank1

__all__ = [
    "DenseFNN",
    "LabeledDataset",
    "Rank1FNN",
    "TrainConfig",
    "TrainReport",
    "extract_patches",
    "generate_synthetic",
    "load_model",
    "param_count",
    "per_class_split",
    "save_model",
    "train_dense",
    "train_rank1",
]
__version__ = "0.1.0"
