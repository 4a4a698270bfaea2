"""Minimal reverse-mode autodiff engine: tensors, layers, losses and Adam."""

from . import losses, ops
from .gradcheck import (
    GradCheck, activation_pattern, check_gradients, finite_difference_check, kink_margin, numerical_gradient,
    relative_error,
)
from .layers import GRU, Conv1D, Dense, Embedding, GruParams, Module, Sequential, glorot_uniform
from .optim import Adam, AdamState, adam_step
from .tensor import Tensor, as_tensor, backward, grad

__all__ = [
    "Adam", "AdamState", "Conv1D", "Dense", "Embedding", "GRU", "GradCheck", "GruParams", "Module",
    "Sequential", "Tensor", "activation_pattern", "adam_step", "as_tensor", "backward", "check_gradients",
    "finite_difference_check", "glorot_uniform", "grad", "kink_margin", "losses", "numerical_gradient",
    "ops", "relative_error",
]
