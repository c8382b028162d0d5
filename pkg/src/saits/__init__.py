"""SAITS: self-attention-based imputation for multivariate time series,
built on a small numpy autodiff engine."""

from .data import ImputationDataset, load_dataset, save_dataset, synth_generate
from .evaluate import baseline_last, baseline_median, evaluate_method, metrics
from .model import SAITS, VARIANTS, SaitsConfig, build_model, joint_loss, saits_base, tiny
from .training import impute, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "ImputationDataset", "load_dataset", "save_dataset", "synth_generate",
    "baseline_last", "baseline_median", "evaluate_method", "metrics",
    "SAITS", "VARIANTS", "SaitsConfig", "build_model", "joint_loss", "saits_base", "tiny",
    "impute", "load_checkpoint", "save_checkpoint", "train",
]
