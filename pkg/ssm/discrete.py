"""Static diagonal state-space models: zero-order-hold discretization, convolution kernel, convolution and scan.

A is diagonal and stored as its N entries; B and C are length-N vectors and the input is a single channel.
"""
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from tensor import M3etError, Tensor, as_tensor, apply_op, exp, stack, take

# below this |delta * a| the ZOH input scale uses its Taylor series instead of expm1(delta * a) / a
_SERIES_THRESHOLD = 1e-6


class SsmError(M3etError, ValueError):
    """Invalid state-space parameters or lengths."""


class SsmParams(BaseModel):
    """Continuous-time parameters h'(t) = A h(t) + B x(t), y(t) = C h(t) with step size delta."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    a: Tensor
    b: Tensor
    c: Tensor
    delta: Tensor

    @field_validator('a', 'b', 'c', mode='before')
    @classmethod
    def _as_vector(cls, value) -> Tensor:
        return value if isinstance(value, Tensor) else Tensor(np.atleast_1d(np.asarray(value, dtype=np.float64)))

    @field_validator('delta', mode='before')
    @classmethod
    def _as_scalar(cls, value) -> Tensor:
        return value if isinstance(value, Tensor) else Tensor(float(value))

    @property
    def state_size(self) -> int:
        return self.a.shape[0]

    def check(self):
        n = self.a.shape
        if self.a.ndim != 1 or self.b.shape != n or self.c.shape != n:
            raise SsmError(f'A, B, C must be vectors of one length, got {self.a.shape}, {self.b.shape}, '
                           f'{self.c.shape}')
        if self.delta.ndim != 0:
            raise SsmError(f'static delta must be a scalar, got shape {self.delta.shape}')
        if not np.all(self.delta.data > 0):
            raise SsmError(f'step size delta must be positive, got {self.delta.data}')


def zoh_input_scale(delta: Tensor, a: Tensor) -> Tensor:
    """(exp(delta * a) - 1) / a elementwise, continuous through a = 0 where it equals delta.

    Multiplying by B gives the zero-order-hold input matrix (delta A)^-1 (exp(delta A) - I) delta B.
    """
    if delta.shape != a.shape:
        raise SsmError(f'delta and A must have the same shape, got {delta.shape} and {a.shape}')
    d, x = delta.data, a.data
    z = d * x
    small = np.abs(z) < _SERIES_THRESHOLD
    safe_a = np.where(small, 1.0, x)
    e = np.exp(z)
    out = np.where(small, d * (1.0 + z / 2.0 + z * z / 6.0), np.expm1(z) / safe_a)

    def _backward(g):
        grad_delta = g * e
        grad_a = np.where(small, d * d * (0.5 + z / 3.0), (d * x * e - np.expm1(z)) / (safe_a * safe_a))
        return grad_delta, g * grad_a

    return apply_op(out, (delta, a), _backward, 'zoh_input_scale')


def discretize(p: SsmParams) -> Tuple[Tensor, Tensor]:
    """Zero-order hold: returns (A_bar, B_bar) with A_bar = exp(delta A) and B_bar = (exp(delta A) - 1) / A * B."""
    p.check()
    delta = p.delta.broadcast_to(p.a.shape)
    return exp(delta * p.a), zoh_input_scale(delta, p.a) * p.b


def ssm_kernel(p: SsmParams, length: int) -> Tensor:
    """K[j] = C A_bar^j B_bar for j < length."""
    if length < 1:
        raise SsmError(f'kernel length must be at least 1, got {length}')
    a_bar, state = discretize(p)
    terms = []
    for _ in range(length):
        terms.append((p.c * state).sum())
        state = a_bar * state
    return stack(terms)


def causal_toeplitz(kernel: Tensor) -> Tensor:
    """[L x L] matrix T[t, s] = K[t - s] for s <= t, 0 above the diagonal."""
    length = kernel.shape[0]
    lag = np.subtract.outer(np.arange(length), np.arange(length))
    lower = lag >= 0
    return take(kernel, np.where(lower, lag, 0)) * Tensor(lower.astype(np.float64))


def ssm_conv(x, p: SsmParams) -> Tensor:
    """Causal convolution y[t] = sum_j K[j] x[t - j] from a zero initial state."""
    x = as_tensor(x)
    if x.ndim != 1:
        raise SsmError(f'ssm_conv expects a 1-d sequence, got shape {x.shape}')
    length = x.shape[0]
    return (causal_toeplitz(ssm_kernel(p, length)) @ x.reshape(length, 1)).reshape(length)


def ssm_scan(x, p: SsmParams) -> Tensor:
    """Sequential recurrence h_t = A_bar h_{t-1} + B_bar x_t, y_t = C h_t with h_{-1} = 0."""
    x = as_tensor(x)
    if x.ndim != 1:
        raise SsmError(f'ssm_scan expects a 1-d sequence, got shape {x.shape}')
    a_bar, b_bar = discretize(p)
    state = None
    outputs = []
    for t in range(x.shape[0]):
        drive = b_bar * x[t]
        state = drive if state is None else a_bar * state + drive
        outputs.append((p.c * state).sum())
    return stack(outputs)
