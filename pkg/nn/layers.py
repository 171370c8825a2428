import logging
from typing import Optional

import numpy as np

from tensor import ConfigError, Rng, ShapeError, Tensor, layer_norm, take

from .module import Module, Parameter

logger = logging.getLogger(__name__)

INIT_STD = 0.02


class Linear(Module):
    """``x @ weight + bias`` with weight stored as [in x out]; truncated-normal init, zero bias."""

    def __init__(self, in_features: int, out_features: int, rng: Rng, bias: bool = True):
        if in_features <= 0 or out_features <= 0:
            raise ConfigError(f'Linear extents must be positive, got {in_features}x{out_features}')
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(rng.truncated_normal((in_features, out_features), std=INIT_STD))
        self.bias: Optional[Parameter] = Parameter(np.zeros(out_features)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise ShapeError(f'Linear({self.in_features}->{self.out_features}) got input of shape {x.shape}')
        out = x @ self.weight
        if self.bias is not None:
            out = out + self.bias.broadcast_to(out.shape)
        return out


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        if d <= 0:
            raise ConfigError('LayerNorm dimension must be positive')
        if eps <= 0:
            raise ConfigError('LayerNorm eps must be positive')
        self.eps = eps
        self.gamma = Parameter(np.ones(d))
        self.beta = Parameter(np.zeros(d))

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)


class Dropout(Module):
    """Inverted dropout: kept activations are scaled by 1/(1-p) so evaluation needs no rescale."""

    def __init__(self, p: float = 0.1):
        if not 0.0 <= p < 1.0:
            raise ConfigError(f'dropout probability must be in [0, 1), got {p}')
        self.p = p
        self.rng: Optional[Rng] = None
        self._calls = 0

    def set_rng(self, rng: Rng):
        self.rng = rng
        self._calls = 0

    def forward(self, x: Tensor) -> Tensor:
        if not self.training or self.p == 0.0:
            return x
        if self.rng is None:
            raise ConfigError('Dropout in training mode needs a random stream; call Module.reseed() first')
        keep = self.rng.split(self._calls).uniform(x.shape) >= self.p
        self._calls += 1
        return x * Tensor(keep / (1.0 - self.p))


class Embedding(Module):
    """Lookup table of ``count`` learned rows."""

    def __init__(self, count: int, dim: int, rng: Rng):
        self.count = count
        self.weight = Parameter(rng.truncated_normal((count, dim), std=INIT_STD))

    def forward(self, ids: np.ndarray) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.count):
            raise ShapeError(f'embedding ids must lie in [0, {self.count}), got range [{ids.min()}, {ids.max()}]')
        return take(self.weight, ids, axis=0)
