"""Expose model and record types."""

from .experiment import ConditionResult, TrainConfig, VandKind, VandMode, load_config
from .layers import GaussianHeadParams, LstmLayerParams, VandLayerParams
from .network import StackedModel, load_model, model_filename, save_model
from .trajectory import Batch, NormStats, Trajectory

__all__ = [
    "ConditionResult",
    "TrainConfig",
    "VandKind",
    "VandMode",
    "load_config",
    "GaussianHeadParams",
    "LstmLayerParams",
    "VandLayerParams",
    "StackedModel",
    "load_model",
    "model_filename",
    "save_model",
    "Batch",
    "NormStats",
    "Trajectory",
]
