import logging
from typing import Dict, List, Tuple

import numpy as np
from pydantic import BaseModel, Field

from tensor import NonFiniteError, Tensor

from .masked import LossError

logger = logging.getLogger(__name__)

TASKS: Tuple[str, ...] = ('rgb', 'depth', 'semseg', 'text')


class LossWeights(BaseModel):
    rgb: float = Field(default=1.0, ge=0.0, description='Weight of the masked MSE on RGB patches')
    depth: float = Field(default=1.0, ge=0.0, description='Weight of the masked L1 on normalized depth patches')
    semseg: float = Field(default=1.0, ge=0.0, description='Weight of the masked cross-entropy on semseg pixels')
    text: float = Field(default=1.0, ge=0.0, description='Weight of the token cross-entropy on captions')

    def weight(self, task: str) -> float:
        if task not in TASKS:
            raise LossError(f"unknown task '{task}'")
        return getattr(self, task)

    def active(self) -> List[str]:
        return [task for task in TASKS if self.weight(task) > 0.0]


class LossBreakdown(BaseModel):
    """Values of one step's losses, kept for logging."""
    total: float
    components: Dict[str, float]


def total_loss(components: Dict[str, Tensor], w: LossWeights) -> Tuple[Tensor, LossBreakdown]:
    """Weighted sum of the component losses.

    Zero-weight components are reported but left out of the sum, so their parameters receive no gradient.
    """
    values = {}
    for task, loss in components.items():
        if task not in TASKS:
            raise LossError(f"unknown loss component '{task}'")
        if loss.size != 1:
            raise LossError(f"component '{task}' must be a scalar, got shape {loss.shape}")
        values[task] = loss.item()
    bad = {task: value for task, value in values.items() if not np.isfinite(value)}
    if bad:
        raise NonFiniteError(f'non-finite loss component(s) {bad}; all components: {values}')

    weighted = [loss * w.weight(task) for task, loss in components.items() if w.weight(task) > 0.0]
    if not weighted:
        raise LossError(f'no component with a positive weight among {sorted(components)}')
    total = weighted[0]
    for term in weighted[1:]:
        total = total + term
    return total, LossBreakdown(total=total.item(), components=values)
