"""Layers for the attention encoders: linear maps, layer norm, dropout,
sinusoidal positional encoding, diagonally-masked attention, FFN and the
post-norm encoder layer."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as tn
from .errors import ConfigError, DegenerateSequenceError, DimensionError
from .tensor import Tensor


class Parameter(Tensor):
    def __init__(self, data):
        super().__init__(data, requires_grad=True)


class Module:
    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self):
        return sum(p.size for p in self.parameters())

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=p.dtype)
            if value.shape != p.shape:
                raise DimensionError(f"{name}: expected shape {p.shape}, got {value.shape}")
            p.data = value.copy()


def xavier_uniform(rng, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Linear(Module):
    """``x @ W + b`` with ``W`` of shape (in, out)."""

    def __init__(self, in_features, out_features, rng, bias=True):
        self.W = Parameter(xavier_uniform(rng, in_features, out_features))
        self.b = Parameter(np.zeros(out_features)) if bias else None

    def forward(self, x):
        out = tn.matmul(x, self.W)
        return out + self.b if self.b is not None else out


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        self.gain = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x):
        return tn.layer_norm(x, self.gain, self.bias, self.eps)


class Dropout(Module):
    """Inverted dropout: scale kept units by 1/(1-p) while training,
    identity in eval mode."""

    def __init__(self, p, rng):
        if not 0.0 <= p < 1.0:
            raise ConfigError(f"dropout rate must lie in [0, 1), got {p}")
        self.p = p
        self.rng = rng

    def forward(self, x):
        if not self.training or self.p == 0.0:
            return x
        keep = self.rng.random(x.shape) >= self.p
        return x * (keep / (1.0 - self.p))


@lru_cache(maxsize=32)
def _pe_table(steps, d_model):
    pos = np.arange(steps, dtype=np.float64)[:, None]
    two_i = np.arange(0, d_model, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, two_i / d_model)
    pe = np.empty((steps, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    pe.flags.writeable = False
    return pe


def positional_encoding(steps, d_model):
    """Sinusoidal encoding of shape (steps, d_model); sine on even
    columns, cosine on odd ones."""
    if d_model % 2:
        raise ConfigError(f"d_model must be even for positional encoding, got {d_model}")
    return _pe_table(steps, d_model).copy()


@lru_cache(maxsize=32)
def diagonal_mask(steps):
    m = np.zeros((steps, steps))
    np.fill_diagonal(m, tn.MASK_FILL)
    m.flags.writeable = False
    return m


@dataclass
class AttentionOutput:
    values: Tensor
    weights: Tensor


def diag_masked_self_attention(q, k, v, diag_mask=True):
    """Scaled dot-product attention over the second-to-last axis.

    With ``diag_mask`` the score of every step with itself is pushed to
    -1e9 before the softmax, so a step never attends to itself.
    """
    steps = q.shape[-2]
    if diag_mask and steps < 2:
        raise DegenerateSequenceError("diagonal masking needs at least 2 time steps")
    d_k = q.shape[-1]
    scores = tn.matmul(q, k.swapaxes(-1, -2)) / math.sqrt(d_k)
    weights = tn.softmax_lastaxis(scores, diagonal_mask(steps) if diag_mask else None)
    return AttentionOutput(tn.matmul(weights, v), weights)


class MultiHeadAttention(Module):
    def __init__(self, d_model, n_heads, d_k, d_v, rng, diag_mask=True):
        self.n_heads, self.d_k, self.d_v = n_heads, d_k, d_v
        self.diag_mask = diag_mask
        # Per-head projections stored side by side: columns [i*d_k:(i+1)*d_k] are head i.
        self.w_q = Linear(d_model, n_heads * d_k, rng, bias=False)
        self.w_k = Linear(d_model, n_heads * d_k, rng, bias=False)
        self.w_v = Linear(d_model, n_heads * d_v, rng, bias=False)
        self.w_o = Linear(n_heads * d_v, d_model, rng, bias=False)

    def _split(self, x, d):
        b, t, _ = x.shape
        return x.reshape(b, t, self.n_heads, d).transpose(0, 2, 1, 3)

    def forward(self, x):
        if x.ndim != 3:
            raise DimensionError(f"attention expects (B, T, d_model), got {x.shape}")
        b, t, _ = x.shape
        q = self._split(self.w_q(x), self.d_k)
        k = self._split(self.w_k(x), self.d_k)
        v = self._split(self.w_v(x), self.d_v)
        att = diag_masked_self_attention(q, k, v, self.diag_mask)
        heads = att.values.transpose(0, 2, 1, 3).reshape(b, t, self.n_heads * self.d_v)
        return AttentionOutput(self.w_o(heads), att.weights)


class FeedForward(Module):
    def __init__(self, d_model, d_ffn, rng):
        self.w_1 = Linear(d_model, d_ffn, rng)
        self.w_2 = Linear(d_ffn, d_model, rng)

    def forward(self, x):
        return self.w_2(tn.relu(self.w_1(x)))


class EncoderLayer(Module):
    """Post-norm layer: LN(x + drop(MHA(x))) then LN(y + drop(FFN(y)))."""

    def __init__(self, d_model, d_ffn, n_heads, d_k, d_v, dropout, rng, diag_mask=True,
                 dropout_rng=None):
        dropout_rng = dropout_rng if dropout_rng is not None else rng
        self.attention = MultiHeadAttention(d_model, n_heads, d_k, d_v, rng, diag_mask)
        self.norm_1 = LayerNorm(d_model)
        self.ffn = FeedForward(d_model, d_ffn, rng)
        self.norm_2 = LayerNorm(d_model)
        self.dropout_1 = Dropout(dropout, dropout_rng)
        self.dropout_2 = Dropout(dropout, dropout_rng)

    def forward(self, x):
        att = self.attention(x)
        y = self.norm_1(x + self.dropout_1(att.values))
        out = self.norm_2(y + self.dropout_2(self.ffn(y)))
        return out, att.weights
