"""Fused primitives with hand-written gradients."""
import math

import numpy as np
from scipy.special import expit, ndtr

from .core import Tensor, apply_op
from .errors import ShapeError

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x) with Phi the standard normal CDF."""
    cdf = ndtr(x.data)
    pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
    return apply_op(x.data * cdf, (x,), lambda g: (g * (cdf + x.data * pdf),), 'gelu')


def softplus(x: Tensor) -> Tensor:
    return apply_op(np.logaddexp(0.0, x.data), (x,), lambda g: (g * expit(x.data),), 'softplus')


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def _backward(g):
        return out * (g - (g * out).sum(axis=axis, keepdims=True)),

    return apply_op(out, (x,), _backward, 'softmax')


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def _backward(g):
        return g - np.exp(out) * g.sum(axis=axis, keepdims=True),

    return apply_op(out, (x,), _backward, 'log_softmax')


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalizes the last axis to zero mean and unit variance, then applies the affine ``gamma``/``beta``."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f'layer_norm affine parameters must have shape ({d},), got {gamma.shape} and {beta.shape}')
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    rstd = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * rstd
    lead = tuple(range(x.ndim - 1))

    def _backward(g):
        dxhat = g * gamma.data
        dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                     - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return apply_op(xhat * gamma.data + beta.data, (x, gamma, beta), _backward, 'layer_norm')


def pick(x: Tensor, indices: np.ndarray) -> Tensor:
    """Selects ``x[..., indices[...]]`` along the last axis (one entry per leading position)."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.shape != x.shape[:-1]:
        raise ShapeError(f'pick indices shape {indices.shape} does not match leading shape {x.shape[:-1]}')
    expanded = indices[..., None]
    out = np.take_along_axis(x.data, expanded, axis=-1)[..., 0]

    def _backward(g):
        grad = np.zeros_like(x.data)
        np.put_along_axis(grad, expanded, g[..., None], axis=-1)
        return grad,

    return apply_op(out, (x,), _backward, 'pick')
