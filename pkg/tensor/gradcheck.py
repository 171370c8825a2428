import logging
from typing import Callable, Optional

import numpy as np

from .core import Tensor, no_grad
from .errors import GradientError, NonFiniteError
from .rng import Rng

logger = logging.getLogger(__name__)


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5, max_elements: Optional[int] = None,
               rng: Optional[Rng] = None) -> float:
    """Compares the taped gradient of scalar ``f(x)`` with central differences.

    Returns ``max |analytic - numeric| / max(1, |analytic|)`` over the checked elements. ``max_elements`` limits
    the check to a random subset of large tensors. ``f`` must be deterministic and ``x`` stored in 64-bit.
    """
    if x.dtype != np.float64:
        raise GradientError(f'grad_check needs 64-bit tensors, got {x.dtype}')
    if not x.requires_grad:
        raise GradientError('grad_check needs a tensor with requires_grad=True')

    out = f(x)
    if out.size != 1:
        raise GradientError(f'grad_check needs a scalar function, got shape {out.shape}')
    for leaf in out.leaves():
        leaf.grad = None
    out.backward()
    analytic = x.grad.copy() if x.grad is not None else np.zeros_like(x.data)

    x.data = np.ascontiguousarray(x.data)
    flat = x.data.reshape(-1)
    positions = np.arange(flat.size)
    if max_elements is not None and flat.size > max_elements:
        positions = (rng or Rng(0)).choice(flat.size, max_elements)

    worst = 0.0
    with no_grad():
        for position in positions:
            original = flat[position]
            flat[position] = original + eps
            plus = f(x).item()
            flat[position] = original - eps
            minus = f(x).item()
            flat[position] = original
            if not (np.isfinite(plus) and np.isfinite(minus)):
                index = np.unravel_index(position, x.shape)
                raise NonFiniteError(f'non-finite function value while perturbing element {index}')
            numeric = (plus - minus) / (2.0 * eps)
            exact = analytic.reshape(-1)[position]
            worst = max(worst, abs(exact - numeric) / max(1.0, abs(exact)))
    logger.debug('grad_check over %d element(s): max relative error %.3e', len(positions), worst)
    return worst
