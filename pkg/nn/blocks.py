"""Residual blocks of the encoder and decoders.

Both blocks are pre-norm residual: the transform reads ``LayerNorm(x)`` and its output is added back to ``x``.
"""
import logging
from typing import Optional

from ssm.selective import SelectiveParams
from tensor import ConfigError, Rng, ShapeError, Tensor, gelu

from .attention import SelfAttention
from .layers import Dropout, LayerNorm, Linear
from .module import Module

logger = logging.getLogger(__name__)


class Mlp(Module):
    def __init__(self, d: int, hidden: int, rng: Rng):
        self.fc1 = Linear(d, hidden, rng.split('fc1'))
        self.fc2 = Linear(hidden, d, rng.split('fc2'))

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


class TransformerLayer(Module):
    """x + Dropout(Attn(LN(x))), then + Dropout(MLP(LN(.)))."""

    def __init__(self, d: int, heads: int, rng: Rng, mlp_ratio: int = 4, dropout: float = 0.1):
        self.d = d
        self.norm1 = LayerNorm(d)
        self.attn = SelfAttention(d, heads, rng.split('attn'))
        self.drop1 = Dropout(dropout)
        self.norm2 = LayerNorm(d)
        self.mlp = Mlp(d, mlp_ratio * d, rng.split('mlp'))
        self.drop2 = Dropout(dropout)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d:
            raise ShapeError(f'TransformerLayer({self.d}) got input of shape {x.shape}')
        x = x + self.drop1(self.attn(self.norm1(x)))
        return x + self.drop2(self.mlp(self.norm2(x)))


class MambaBlock(Module):
    """LayerNorm, d_model->d_inner projection, GELU, d_inner->d_model projection, Dropout, residual add.

    With ``inner_ssm`` a selective state-space mixer runs over the GELU output (added residually) so the token
    sequence is mixed inside the bottleneck.
    """

    def __init__(self, d_model: int, d_inner: int, rng: Rng, dropout: float = 0.1, inner_ssm: bool = False,
                 ssm_state: int = 4):
        if d_model <= 0 or d_inner <= 0:
            raise ConfigError(f'MambaBlock widths must be positive, got {d_model} and {d_inner}')
        self.d_model = d_model
        self.d_inner = d_inner
        self.norm = LayerNorm(d_model)
        self.down = Linear(d_model, d_inner, rng.split('down'))
        self.up = Linear(d_inner, d_model, rng.split('up'))
        self.dropout = Dropout(dropout)
        self.ssm_mixer: Optional[SelectiveParams] = None
        if inner_ssm:
            self.ssm_mixer = SelectiveParams(d_inner, ssm_state, rng.split('ssm'))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_model:
            raise ShapeError(f'MambaBlock({self.d_model}) got input of shape {x.shape}')
        h = gelu(self.down(self.norm(x)))
        if self.ssm_mixer is not None:
            h = h + self.ssm_mixer(h)
        return x + self.dropout(self.up(h))


def mamba_block_forward(x: Tensor, block: MambaBlock, training: bool) -> Tensor:
    block.train(training)
    return block(x)


def transformer_layer_forward(x: Tensor, layer: TransformerLayer, training: bool) -> Tensor:
    layer.train(training)
    return layer(x)
