"""AdamW with decoupled weight decay, and learning-rate schedules."""
import logging
import math
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from nn import Parameter
from tensor import ConfigError, NonFiniteError, ShapeError

from .config import OptimizerConfig

logger = logging.getLogger(__name__)

Schedule = Callable[[int], float]


class AdamWState(BaseModel):
    """Moment estimates per parameter name; ``step`` counts completed updates."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    step: int = Field(default=0, ge=0)
    m: Dict[str, np.ndarray] = Field(default_factory=dict)
    v: Dict[str, np.ndarray] = Field(default_factory=dict)


def adamw_step(params: Dict[str, np.ndarray], grads: Dict[str, Optional[np.ndarray]], state: AdamWState, lr: float,
               hyper: OptimizerConfig) -> Tuple[Dict[str, np.ndarray], AdamWState]:
    """One AdamW update. Returns new parameter arrays and the new state; the inputs are left untouched.

    A missing gradient counts as zero. Decay is applied to every parameter as ``p * (1 - lr * wd)``.
    """
    for name, grad in grads.items():
        if grad is None:
            continue
        if name not in params:
            raise ShapeError(f"gradient for unknown parameter '{name}'")
        if grad.shape != params[name].shape:
            raise ShapeError(f"gradient of '{name}' has shape {grad.shape}, parameter has {params[name].shape}")
        if not np.isfinite(grad).all():
            raise NonFiniteError(f"non-finite gradient for parameter '{name}'")

    beta1, beta2 = hyper.betas
    step = state.step + 1
    correction1 = 1.0 - beta1 ** step
    correction2 = 1.0 - beta2 ** step
    updated, m, v = {}, {}, {}
    for name, value in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(value)
        m[name] = beta1 * state.m.get(name, np.zeros_like(value)) + (1.0 - beta1) * grad
        v[name] = beta2 * state.v.get(name, np.zeros_like(value)) + (1.0 - beta2) * grad * grad
        m_hat = m[name] / correction1
        v_hat = v[name] / correction2
        decayed = value * (1.0 - lr * hyper.weight_decay)
        updated[name] = (decayed - lr * m_hat / (np.sqrt(v_hat) + hyper.eps)).astype(value.dtype)
    return updated, AdamWState(step=step, m=m, v=v)


def constant_schedule(lr: float) -> Schedule:
    return lambda step: lr


def warmup_cosine_schedule(lr: float, total_steps: int, warmup_steps: int = 0, min_lr: float = 0.0) -> Schedule:
    """Linear warmup to ``lr`` over ``warmup_steps``, then cosine decay to ``min_lr`` at ``total_steps``.

    Steps count from 1.
    """
    if total_steps <= 0:
        raise ConfigError('a cosine schedule needs a positive step count')

    def schedule(step: int) -> float:
        if step <= warmup_steps:
            return lr * step / (warmup_steps + 1)
        if step >= total_steps:
            return min_lr
        progress = (step - warmup_steps) / max(1, total_steps - warmup_steps)
        return min_lr + 0.5 * (1.0 + math.cos(math.pi * progress)) * (lr - min_lr)

    return schedule


def make_schedule(hyper: OptimizerConfig, total_steps: int) -> Schedule:
    match hyper.schedule:
        case 'constant':
            return constant_schedule(hyper.lr)
        case 'cosine':
            return warmup_cosine_schedule(hyper.lr, total_steps, hyper.warmup_steps, hyper.min_lr)
        case _:
            raise ConfigError(f"unknown schedule '{hyper.schedule}'")


class AdamW:
    """Applies :func:`adamw_step` to named parameters in place."""

    def __init__(self, named_parameters: List[Tuple[str, Parameter]], hyper: OptimizerConfig, total_steps: int):
        self._params = dict(named_parameters)
        self.hyper = hyper
        self.schedule = make_schedule(hyper, total_steps)
        self.state = AdamWState()

    @property
    def step_count(self) -> int:
        return self.state.step

    def step(self) -> float:
        """Updates every parameter from its ``grad`` and returns the learning rate used."""
        lr = self.schedule(self.state.step + 1)
        values = {name: p.data for name, p in self._params.items()}
        grads = {name: p.grad for name, p in self._params.items()}
        updated, self.state = adamw_step(values, grads, self.state, lr, self.hyper)
        for name, p in self._params.items():
            p.data = updated[name]
        return lr

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def state_arrays(self) -> Dict[str, np.ndarray]:
        """Moments as a flat name -> array directory for checkpointing."""
        arrays = {f'm.{name}': value for name, value in self.state.m.items()}
        arrays.update({f'v.{name}': value for name, value in self.state.v.items()})
        return arrays

    def load_state_arrays(self, step: int, arrays: Dict[str, np.ndarray]):
        m, v = {}, {}
        for key, value in arrays.items():
            kind, _, name = key.partition('.')
            if name not in self._params or kind not in ('m', 'v'):
                raise KeyError(f"optimizer state entry '{key}' matches no parameter")
            if value.shape != self._params[name].shape:
                raise ShapeError(f"optimizer state '{key}' has shape {value.shape}, "
                                 f'parameter has {self._params[name].shape}')
            (m if kind == 'm' else v)[name] = np.array(value, copy=True)
        self.state = AdamWState(step=step, m=m, v=v)
