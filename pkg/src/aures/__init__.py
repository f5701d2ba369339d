"""Slowfast normalizer-free audio representation learning on a small
self-contained tensor engine, with a frozen-feature evaluation harness.
"""

from .errors import AuresError
from .layers import NormKind
from .model import Model, ModelConfig, build_model, desk_config, forward_features, full_config, shape_trace
from .tensor import Tensor, backward, grad_check, tape

__all__ = [
    "AuresError",
    "Model",
    "ModelConfig",
    "NormKind",
    "Tensor",
    "backward",
    "build_model",
    "desk_config",
    "forward_features",
    "full_config",
    "grad_check",
    "shape_trace",
    "tape",
]

__version__ = "0.1.0"
