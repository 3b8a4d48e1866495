"""Heterogeneous window transformer for image denoising, on a numpy autodiff core."""

from .errors import (
    ArchitectureMismatchError,
    CheckpointVersionError,
    ConfigError,
    CorruptCheckpointError,
    DataError,
    HWformerError,
    NumericError,
    UsageError,
)
from .model import HWformer, ModelConfig, ModelWeights, count_flops, count_params, forward, preset
from .tensor import Tensor, finite_diff_check, no_grad
from .training import TrainConfig, lr_at, train

__version__ = "0.1.0"

__all__ = [
    "ArchitectureMismatchError", "CheckpointVersionError", "ConfigError", "CorruptCheckpointError",
    "DataError", "HWformerError", "NumericError", "UsageError",
    "HWformer", "ModelConfig", "ModelWeights", "count_flops", "count_params", "forward", "preset",
    "Tensor", "finite_diff_check", "no_grad",
    "TrainConfig", "lr_at", "train",
]
