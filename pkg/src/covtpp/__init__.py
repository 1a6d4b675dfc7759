"""Covariate-aware temporal point processes with attention-based feature importance."""

from .data import Dataset, EventSequence, load_dataset, save_dataset, split_dataset, standardize_covariates
from .encoder import HyperParams
from .metrics import Metrics
from .model import TransFeatTPP
from .simulate import SimConfig, generate_dataset
from .train import TrainConfig, ablation_study, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "EventSequence",
    "HyperParams",
    "Metrics",
    "SimConfig",
    "TrainConfig",
    "TransFeatTPP",
    "ablation_study",
    "evaluate",
    "generate_dataset",
    "load_dataset",
    "save_dataset",
    "split_dataset",
    "standardize_covariates",
    "train",
]
