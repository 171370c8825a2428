"""Matrix ("dual") form of a state-space model.

The sequence map y = SSM(A, B, C)(x) equals y = M x for the lower-triangular semiseparable matrix

    M[j, i] = C_j . (prod_{k=i+1..j} A_bar_k) B_bar_i      for i <= j, 0 above the diagonal,

built as a causal mask applied elementwise to C B^T-style products. The transition product starts after step i,
so the diagonal holds C_i . B_bar_i and M x reproduces the recurrence exactly.
"""
from typing import Union

import numpy as np
from pydantic import BaseModel, ConfigDict

from tensor import Tensor, cumsum, exp

from .discrete import SsmError, SsmParams, discretize

DEFAULT_CAP = 512


class StepParams(BaseModel):
    """Per-step discrete parameters of one channel, each [L x N]: log A_bar_t (= delta_t A), B_bar_t and C_t."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    log_a_bar: Tensor
    b_bar: Tensor
    c: Tensor

    @property
    def length(self) -> int:
        return self.log_a_bar.shape[0]


def static_steps(p: SsmParams, length: int) -> StepParams:
    p.check()
    shape = (length, p.state_size)
    log_a_bar = (p.delta.broadcast_to(p.a.shape) * p.a).reshape(1, p.state_size).broadcast_to(shape)
    _, b_bar = discretize(p)
    return StepParams(log_a_bar=log_a_bar,
                      b_bar=b_bar.reshape(1, p.state_size).broadcast_to(shape),
                      c=p.c.reshape(1, p.state_size).broadcast_to(shape))


def ssd_materialize(params: Union[SsmParams, StepParams], length: int, cap: int = DEFAULT_CAP) -> Tensor:
    """Materializes the [L x L] matrix M of a static (SsmParams) or per-step (StepParams) model."""
    if length < 1:
        raise SsmError(f'length must be at least 1, got {length}')
    if length > cap:
        raise SsmError(f'refusing to materialize a {length}x{length} matrix (cap {cap})')
    steps = static_steps(params, length) if isinstance(params, SsmParams) else params
    if steps.length != length:
        raise SsmError(f'per-step parameters cover {steps.length} steps, expected {length}')
    for name in ('b_bar', 'c'):
        if getattr(steps, name).shape != steps.log_a_bar.shape:
            raise SsmError(f'{name} must match log_a_bar shape {steps.log_a_bar.shape}')

    n = steps.log_a_bar.shape[1]
    cube = (length, length, n)
    lower = Tensor(np.broadcast_to(np.tril(np.ones((length, length)))[:, :, None], cube))
    totals = cumsum(steps.log_a_bar, axis=0)
    row = totals.reshape(length, 1, n).broadcast_to(cube)
    col = totals.reshape(1, length, n).broadcast_to(cube)
    decay = exp((row - col) * lower) * lower
    c_rows = steps.c.reshape(length, 1, n).broadcast_to(cube)
    b_cols = steps.b_bar.reshape(1, length, n).broadcast_to(cube)
    return (c_rows * decay * b_cols).sum(axis=-1)


def ssd_apply(m: Tensor, x: Tensor) -> Tensor:
    length = x.shape[0]
    return (m @ x.reshape(length, 1)).reshape(length)
