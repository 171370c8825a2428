"""Selective (input-dependent) state-space model.

Per step t: B_t = s_B(x_t), C_t = s_C(x_t), delta_t = softplus(P + s_delta(x_t)). Every input channel runs its own
diagonal state of size N with transition A[channel]; B_t, C_t and delta_t are shared by the channels.
"""
import math
from typing import Optional

import numpy as np

from nn.layers import Linear
from nn.module import Module, Parameter
from tensor import NonFiniteError, Rng, Tensor, exp, softplus, stack

from .discrete import SsmError, zoh_input_scale
from .duality import StepParams

INITIAL_STEP = 0.1


class SelectiveParams(Module):
    """s_B, s_C: d_in -> N; s_delta: d_in -> 1; scalar bias P; A = -exp(a_log) initialized to -(1..N)."""

    def __init__(self, d_in: int, state_size: int, rng: Rng):
        if d_in <= 0 or state_size <= 0:
            raise SsmError(f'selective SSM sizes must be positive, got d_in={d_in}, N={state_size}')
        self.d_in = d_in
        self.state_size = state_size
        self.s_b = Linear(d_in, state_size, rng.split('s_b'))
        self.s_c = Linear(d_in, state_size, rng.split('s_c'))
        self.s_delta = Linear(d_in, 1, rng.split('s_delta'))
        # softplus(P) == INITIAL_STEP
        self.p = Parameter(np.asarray(math.log(math.expm1(INITIAL_STEP))))
        self.a_log = Parameter(np.log(np.tile(np.arange(1, state_size + 1, dtype=np.float64), (d_in, 1))))

    def transition(self) -> Tensor:
        return -exp(self.a_log)

    def step_sizes(self, x: Tensor) -> Tensor:
        """delta_t for every step, [L x 1]."""
        delta = softplus(self.s_delta(x) + self.p)
        if not delta.is_finite():
            bad = np.argwhere(~np.isfinite(delta.data))[:, 0]
            raise NonFiniteError(f'non-finite selective step size at time step(s) {bad.tolist()}')
        return delta

    def forward(self, x: Tensor) -> Tensor:
        return selective_scan(x, self)


def selective_scan(x: Tensor, sel: SelectiveParams, a: Optional[Tensor] = None) -> Tensor:
    """Runs the selective recurrence over x [L x d_in] and returns y [L x d_in].

    ``a`` overrides the module's transition matrix [d_in x N].
    """
    if x.ndim != 2 or x.shape[1] != sel.d_in:
        raise SsmError(f'selective_scan expects [L x {sel.d_in}], got {x.shape}')
    a = sel.transition() if a is None else a
    d_in, n = sel.d_in, sel.state_size
    if a.shape != (d_in, n):
        raise SsmError(f'transition must be [{d_in} x {n}], got {a.shape}')
    grid = (d_in, n)
    b_steps = sel.s_b(x)
    c_steps = sel.s_c(x)
    delta = sel.step_sizes(x)

    state = None
    outputs = []
    for t in range(x.shape[0]):
        delta_t = delta[t].reshape(1, 1).broadcast_to(grid)
        a_bar = exp(delta_t * a)
        drive = zoh_input_scale(delta_t, a) * b_steps[t].reshape(1, n).broadcast_to(grid) \
            * x[t].reshape(d_in, 1).broadcast_to(grid)
        state = drive if state is None else a_bar * state + drive
        outputs.append((c_steps[t].reshape(1, n).broadcast_to(grid) * state).sum(axis=1))
    return stack(outputs)


def selective_steps(x: Tensor, sel: SelectiveParams, channel: int) -> StepParams:
    """Per-step discrete parameters of one channel, for the materialized matrix form."""
    length, n = x.shape[0], sel.state_size
    a = sel.transition()[channel].reshape(1, n).broadcast_to((length, n))
    delta = sel.step_sizes(x).broadcast_to((length, n))
    return StepParams(log_a_bar=delta * a,
                      b_bar=zoh_input_scale(delta, a) * sel.s_b(x),
                      c=sel.s_c(x))
