"""Adam with bias correction and a cosine learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import OptimizerError
from .tensor import Tensor

BASE_LR = 1e-3


@dataclass
class OptimizerState:
    first_moment: list
    second_moment: list
    step: int = 0
    base_lr: float = BASE_LR
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[Tensor], **kwargs) -> "OptimizerState":
        return cls([np.zeros_like(p.data) for p in params],
                   [np.zeros_like(p.data) for p in params], **kwargs)


def adam_step(params: Sequence[Tensor], state: OptimizerState, lr: float) -> None:
    """Apply one Adam update in place. Gradients are left for the caller to zero."""
    if len(params) != len(state.first_moment):
        raise OptimizerError("parameter list does not match optimizer state")
    for p in params:
        if p.grad is None:
            raise OptimizerError(f"parameter {p.name or '<unnamed>'} has no gradient")
    state.step += 1
    b1, b2 = state.betas
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, m, v in zip(params, state.first_moment, state.second_moment):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def zero_grad(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None


def cosine_lr(step: int, total_steps: int, base_lr: float = BASE_LR) -> float:
    """Cosine decay from ``base_lr`` at step 0 to 0 at ``total_steps``."""
    if total_steps <= 0:
        return base_lr
    step = min(max(step, 0), total_steps)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))
