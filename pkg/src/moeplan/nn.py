"""Small layer library on top of the differentiation core."""
from __future__ import annotations

import math

import numpy as np

from .diff import tensor as ops
from .diff.tensor import NEG_LARGE, Tensor, parameter


class Module:
    """Parameter container; attributes that are parameters, modules or lists of modules are walked in order."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ValueError(f"{name}: expected shape {p.shape}, got {value.shape}")
            p.data = value.copy()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


RELU_GAIN = math.sqrt(2.0)


class Linear(Module):
    """Affine map with uniform fan-in init of variance ``gain**2 / d_in``.

    A gain of ``RELU_GAIN`` keeps activations at a steady scale through a
    ReLU stack; a small gain makes an output head start near zero.
    """

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, gain: float = 1.0):
        bound = gain * math.sqrt(3.0 / d_in)
        self.weight = parameter(rng.uniform(-bound, bound, size=(d_in, d_out)))
        self.bias = parameter(np.zeros(d_out))

    def __call__(self, x):
        return x @ self.weight + self.bias


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gain = parameter(np.ones(d))
        self.bias = parameter(np.zeros(d))

    def __call__(self, x):
        return ops.layer_norm(x) * self.gain + self.bias


class FeedForward(Module):
    def __init__(self, d: int, d_hidden: int, rng):
        self.fc1 = Linear(d, d_hidden, rng, gain=RELU_GAIN)
        self.fc2 = Linear(d_hidden, d, rng)

    def __call__(self, x):
        return self.fc2(ops.relu(self.fc1(x)))


class MultiHeadAttention(Module):
    def __init__(self, d: int, n_heads: int, rng):
        if d % n_heads:
            raise ValueError(f"width {d} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.wq = Linear(d, d, rng)
        self.wk = Linear(d, d, rng)
        self.wv = Linear(d, d, rng)
        self.wo = Linear(d, d, rng)
        # opt-in so shared read-only models stay free of per-call state
        self.record = False
        self.last_weights = None

    def __call__(self, q_in, kv_in, key_mask: np.ndarray):
        """``key_mask`` ``[B, Lk]`` is true for keys that may be attended to."""
        b, lq, d = q_in.shape
        lk = kv_in.shape[1]
        h = self.n_heads
        dh = d // h
        q = self.wq(q_in).reshape(b, lq, h, dh).transpose(0, 2, 1, 3)
        k = self.wk(kv_in).reshape(b, lk, h, dh).transpose(0, 2, 3, 1)
        v = self.wv(kv_in).reshape(b, lk, h, dh).transpose(0, 2, 1, 3)
        scores = ops.scale(q @ k, 1.0 / math.sqrt(dh))
        scores = ops.masked_fill(scores, ~key_mask[:, None, None, :], NEG_LARGE)
        weights = ops.softmax(scores, axis=-1)
        if self.record:
            self.last_weights = weights.data
        out = (weights @ v).transpose(0, 2, 1, 3).reshape(b, lq, d)
        return self.wo(out)


class EncoderLayer(Module):
    """Pre-norm self-attention block."""

    def __init__(self, d: int, d_ffn: int, n_heads: int, rng):
        self.norm1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, n_heads, rng)
        self.norm2 = LayerNorm(d)
        self.ffn = FeedForward(d, d_ffn, rng)

    def __call__(self, x, mask):
        h = self.norm1(x)
        x = x + self.attn(h, h, mask)
        return x + self.ffn(self.norm2(x))


class DecoderLayer(Module):
    """Pre-norm query self-attention, cross-attention to the context, FFN."""

    def __init__(self, d: int, d_ffn: int, n_heads: int, rng):
        self.norm1 = LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, n_heads, rng)
        self.norm2 = LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, n_heads, rng)
        self.norm3 = LayerNorm(d)
        self.ffn = FeedForward(d, d_ffn, rng)

    def __call__(self, q, q_mask, memory, memory_mask):
        h = self.norm1(q)
        q = q + self.self_attn(h, h, q_mask)
        q = q + self.cross_attn(self.norm2(q), memory, memory_mask)
        return q + self.ffn(self.norm3(q))
