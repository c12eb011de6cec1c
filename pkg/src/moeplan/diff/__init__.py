"""Minimal reverse-mode differentiation core."""
from . import tensor as ops
from .checkpoint import load_params, save_params
from .optim import OptimizerState, adam_step, cosine_lr, zero_grad
from .tensor import Tensor, as_tensor, no_grad, parameter

__all__ = ["Tensor", "as_tensor", "no_grad", "parameter", "ops", "OptimizerState", "adam_step",
           "cosine_lr", "zero_grad", "save_params", "load_params"]
