"""Parameterised building blocks on top of numkit."""

from __future__ import annotations

import contextlib
import threading

import numpy as np

from .. import numkit as nk
from ..numkit import Tensor

_state = threading.local()


@contextlib.contextmanager
def dropout_enabled(rng):
    """Activate dropout inside the block, drawing masks from ``rng``."""
    prev = getattr(_state, "rng", None)
    _state.rng = rng
    try:
        yield
    finally:
        _state.rng = prev


def dropout(x, p):
    """Inverted dropout; identity unless called inside ``dropout_enabled``."""
    rng = getattr(_state, "rng", None)
    if rng is None or p <= 0:
        return x
    keep = rng.random(x.shape) >= p
    return x * (keep / (1.0 - p))


class Module:
    """Minimal parameter container; parameters are discovered by attribute walk."""

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]


def uniform_init(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def zeros(shape):
    return Tensor(np.zeros(shape), requires_grad=True)


class Linear(Module):
    def __init__(self, rng, d_in, d_out, bias=True):
        self.weight = uniform_init(rng, (d_in, d_out), d_in)
        self.bias = zeros((d_out,)) if bias else None

    def __call__(self, x):
        y = nk.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d):
        self.gamma = Tensor(np.ones(d), requires_grad=True)
        self.beta = zeros((d,))

    def __call__(self, x):
        return nk.layer_norm(x, self.gamma, self.beta)


class GroupNorm(Module):
    def __init__(self, channels, groups):
        self.groups = groups
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = zeros((channels,))

    def __call__(self, x, batch_axes=1):
        return nk.group_norm(x, self.groups, batch_axes=batch_axes) * self.gamma + self.beta


class FeedForward(Module):
    def __init__(self, rng, d, hidden, d_out=None):
        self.fc1 = Linear(rng, d, hidden)
        self.fc2 = Linear(rng, hidden, d if d_out is None else d_out)

    def __call__(self, x):
        return self.fc2(nk.relu(self.fc1(x)))


class MultiHeadAttention(Module):
    """Scaled dot-product attention; ``mask`` broadcasts to ``(B, H, Tq, Tk)``."""

    def __init__(self, rng, d, heads):
        self.heads = heads
        self.q = Linear(rng, d, d)
        self.k = Linear(rng, d, d)
        self.v = Linear(rng, d, d)
        self.o = Linear(rng, d, d)

    def _split(self, x):
        B, T, d = x.shape
        return x.reshape(B, T, self.heads, d // self.heads).transpose(0, 2, 1, 3)

    def attention_weights(self, x, memory, mask=None):
        q = self._split(self.q(x))
        k = self._split(self.k(memory))
        scores = nk.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(q.shape[-1]))
        return nk.masked_softmax(scores, mask)

    def __call__(self, x, memory, mask=None):
        B, T, d = x.shape
        p = self.attention_weights(x, memory, mask)
        v = self._split(self.v(memory))
        out = nk.matmul(p, v).transpose(0, 2, 1, 3).reshape(B, T, d)
        return self.o(out)


def causal_mask(n):
    return np.tril(np.ones((n, n), dtype=bool))


class EncoderLayer(Module):
    def __init__(self, rng, d, heads, ffn, p_drop=0.0):
        self.p_drop = p_drop
        self.attn = MultiHeadAttention(rng, d, heads)
        self.norm1 = LayerNorm(d)
        self.ff = FeedForward(rng, d, ffn)
        self.norm2 = LayerNorm(d)

    def __call__(self, x):
        x = self.norm1(x + dropout(self.attn(x, x), self.p_drop))
        return self.norm2(x + dropout(self.ff(x), self.p_drop))


class DecoderLayer(Module):
    """Post-norm decoder layer: self -> encoder-decoder -> [predictive] -> feed-forward."""

    def __init__(self, rng, d, heads, ffn, predictive=False, p_drop=0.0):
        self.p_drop = p_drop
        self.self_attn = MultiHeadAttention(rng, d, heads)
        self.norm1 = LayerNorm(d)
        self.cross_attn = MultiHeadAttention(rng, d, heads)
        self.norm2 = LayerNorm(d)
        self.pc_attn = MultiHeadAttention(rng, d, heads) if predictive else None
        self.norm_pc = LayerNorm(d) if predictive else None
        self.ff = FeedForward(rng, d, ffn)
        self.norm3 = LayerNorm(d)

    def __call__(self, x, memory, self_mask, pred=None, pc_mask=None):
        p = self.p_drop
        x = self.norm1(x + dropout(self.self_attn(x, x, self_mask), p))
        x = self.norm2(x + dropout(self.cross_attn(x, memory), p))
        if self.pc_attn is not None and pred is not None:
            x = self.norm_pc(x + dropout(self.pc_attn(x, pred, pc_mask), p))
        return self.norm3(x + dropout(self.ff(x), p))
