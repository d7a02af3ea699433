"""Numeric core: tensors, autodiff, layers, model graphs, optimization."""

from .check import fd_gradient, fd_gradient_at, rel_error
from .graph import ModelGraph
from .layers import (
    LayerSpec,
    ShapeError,
    attention_encoder_forward,
    attention_scores,
    layer_forward,
)
from .optim import Adam, MissingGradient, Schedule, clip_grad_norm, scheduler_lr
from .tensor import (
    Tensor,
    as_tensor,
    avg_pool2d,
    conv2d,
    elu,
    gelu,
    no_grad,
    relu,
    softmax,
)

__all__ = [
    "Adam", "LayerSpec", "MissingGradient", "ModelGraph", "Schedule",
    "ShapeError", "Tensor", "as_tensor", "attention_encoder_forward",
    "attention_scores", "avg_pool2d", "clip_grad_norm", "conv2d", "elu",
    "fd_gradient", "fd_gradient_at", "gelu", "layer_forward", "no_grad",
    "relu", "rel_error", "scheduler_lr", "softmax",
]
