"""Finite-difference gradient checks."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_grad(fn: Callable[[], Tensor], param: Tensor, index, eps: float = 1e-4) -> float:
    """Central difference of scalar ``fn()`` with respect to ``param.data[index]``."""
    orig = param.data[index]
    param.data[index] = orig + eps
    up = fn().item()
    param.data[index] = orig - eps
    down = fn().item()
    param.data[index] = orig
    return (up - down) / (2.0 * eps)


def relative_error(analytic: float, numeric: float, floor: float = 1e-5) -> float:
    """Relative error; differences below ``floor`` in absolute terms count as zero."""
    diff = abs(analytic - numeric)
    if diff <= floor:
        return 0.0
    return diff / max(abs(analytic), abs(numeric))


def sample_entries(params: Sequence[Tensor], count: int, seed: int = 0) -> list:
    """``count`` random ``(param_index, flat_index)`` pairs, spread over all parameters."""
    rng = np.random.default_rng(seed)
    sizes = np.array([p.size for p in params])
    flat = rng.choice(sizes.sum(), size=min(count, int(sizes.sum())), replace=False)
    bounds = np.cumsum(sizes)
    out = []
    for f in np.sort(flat):
        i = int(np.searchsorted(bounds, f, side="right"))
        out.append((i, int(f - (bounds[i - 1] if i else 0))))
    return out


def check_gradients(fn: Callable[[], Tensor], params: Sequence[Tensor], samples=None,
                    eps: float = 1e-4, floor: float = 1e-5, seed: int = 0) -> float:
    """Worst relative error between backprop and central differences.

    ``samples`` is an iterable of ``(param_index, flat_index)`` pairs or a
    count of randomly drawn entries; by default every entry is checked.
    """
    for p in params:
        p.grad = None
    fn().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    if samples is None:
        samples = [(i, j) for i, p in enumerate(params) for j in range(p.size)]
    elif isinstance(samples, int):
        samples = sample_entries(params, samples, seed)
    worst = 0.0
    for i, j in samples:
        p = params[i]
        idx = np.unravel_index(j, p.shape)
        num = numerical_grad(fn, p, idx, eps)
        worst = max(worst, relative_error(float(analytic[i][idx]), num, floor))
    return worst
