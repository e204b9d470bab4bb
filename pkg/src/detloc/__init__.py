"""Two-stream multi-scale face manipulation detection and localization."""

from .locfuse import FusionWeights, binarize, fuse_maps
from .maskgen import ThresholdConfig, align_mask, pair_to_mask
from .metrics import EvalReport, average_precision, confusion_rates, eer, iinc, iou, pbca, roc_auc
from .net import ModelConfig, TwoStreamModel, attention_fuse, build_model, register_backbone
from .residual import NoiseMap, ResidualStats, extract_residual, residual_stats, srm_residual
from .synthbench import SpliceSpec, generate
from .trainer import Checkpoint, PreparedDataset, TrainConfig, evaluate, run_training

__version__ = "0.1.0"

__all__ = [
    "FusionWeights",
    "binarize",
    "fuse_maps",
    "ThresholdConfig",
    "align_mask",
    "pair_to_mask",
    "EvalReport",
    "average_precision",
    "confusion_rates",
    "eer",
    "iinc",
    "iou",
    "pbca",
    "roc_auc",
    "ModelConfig",
    "TwoStreamModel",
    "attention_fuse",
    "build_model",
    "register_backbone",
    "NoiseMap",
    "ResidualStats",
    "extract_residual",
    "residual_stats",
    "srm_residual",
    "SpliceSpec",
    "generate",
    "Checkpoint",
    "PreparedDataset",
    "TrainConfig",
    "evaluate",
    "run_training",
    "__version__",
]
