import math
from typing import Optional

import numpy as np

from tensor import ConfigError, Rng, ShapeError, Tensor, softmax

from .layers import Linear
from .module import Module


class SelfAttention(Module):
    """Multi-head self-attention over a [T x d] token matrix (query, key, value and output projections)."""

    def __init__(self, d: int, heads: int, rng: Rng):
        if d % heads:
            raise ConfigError(f'attention width {d} is not divisible by {heads} heads')
        self.d = d
        self.heads = heads
        self.proj_q = Linear(d, d, rng.split('q'))
        self.proj_k = Linear(d, d, rng.split('k'))
        self.proj_v = Linear(d, d, rng.split('v'))
        self.proj_out = Linear(d, d, rng.split('out'))
        self.last_attention: Optional[np.ndarray] = None

    def _split_heads(self, x: Tensor) -> Tensor:
        tokens = x.shape[0]
        return x.reshape(tokens, self.heads, self.d // self.heads).transpose(1, 0, 2)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.d:
            raise ShapeError(f'SelfAttention({self.d}) expects [T x {self.d}], got {x.shape}')
        q = self._split_heads(self.proj_q(x))
        k = self._split_heads(self.proj_k(x))
        v = self._split_heads(self.proj_v(x))
        weights = softmax((q @ k.mT) * (1.0 / math.sqrt(self.d // self.heads)), axis=-1)
        self.last_attention = weights.data
        context = (weights @ v).transpose(1, 0, 2).reshape(x.shape[0], self.d)
        return self.proj_out(context)


class CrossAttention(Module):
    """Queries from one token group attend over keys from a second group and values from a third.

    All three projections map ``d_in`` to ``d_attn``; scores are scaled by 1/sqrt(d_attn).
    """

    def __init__(self, d_in: int, d_attn: int, rng: Rng):
        self.d_in = d_in
        self.d_attn = d_attn
        self.proj_q = Linear(d_in, d_attn, rng.split('q'))
        self.proj_k = Linear(d_in, d_attn, rng.split('k'))
        self.proj_v = Linear(d_in, d_attn, rng.split('v'))
        self.scale = 1.0 / math.sqrt(d_attn)
        self.last_attention: Optional[np.ndarray] = None

    def forward(self, q_src: Tensor, k_src: Tensor, v_src: Tensor) -> Tensor:
        return cross_attention(q_src, k_src, v_src, self)


def cross_attention(q_src: Tensor, k_src: Tensor, v_src: Tensor, ca: CrossAttention) -> Tensor:
    """softmax(Q Wq (K Wk)^T / sqrt(d)) V Wv, returning [T_q x d_attn]."""
    for name, src in (('query', q_src), ('key', k_src), ('value', v_src)):
        if src.ndim != 2 or src.shape[1] != ca.d_in:
            raise ShapeError(f'{name} tokens must be [T x {ca.d_in}], got {src.shape}')
    if k_src.shape[0] != v_src.shape[0]:
        raise ShapeError(f'key and value token counts must agree, got {k_src.shape[0]} keys and '
                         f'{v_src.shape[0]} values')
    q = ca.proj_q(q_src)
    k = ca.proj_k(k_src)
    v = ca.proj_v(v_src)
    weights = softmax((q @ k.mT) * ca.scale, axis=-1)
    ca.last_attention = weights.data
    return weights @ v
