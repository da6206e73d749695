"""Minimal float64 tensor engine: reverse-mode autodiff, Adam, grad checks."""

from . import ops
from .adam import AdamState, NonFiniteGradientError, adam_step, clip_global_norm
from .checkpoint import CheckpointError, load_tensors, save_tensors
from .gradcheck import GradCheckReport, grad_check
from .tensor import ShapeError, Tensor, backward, grad_enabled, no_grad

__all__ = [
    "AdamState",
    "CheckpointError",
    "GradCheckReport",
    "NonFiniteGradientError",
    "ShapeError",
    "Tensor",
    "adam_step",
    "backward",
    "clip_global_norm",
    "grad_check",
    "grad_enabled",
    "load_tensors",
    "no_grad",
    "ops",
    "save_tensors",
]
