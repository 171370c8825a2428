"""Visible-token plans: how many tokens of each visual modality the encoder sees, and which ones."""
import logging
from typing import Dict, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from tensor import M3etError, Rng

logger = logging.getLogger(__name__)


class MaskingError(M3etError, ValueError):
    """Invalid budget, concentration or sentence spans."""


class MaskPlan(BaseModel):
    """Visibility of every token of one sample (True = visible to the encoder).

    ``visible`` covers the visual modalities that share the Dirichlet budget; ``text_visible`` is governed by
    sentence masking alone and is ``None`` when the sample carries no text.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    visible: Dict[str, np.ndarray]
    ratios: Dict[str, float]
    visible_budget: int
    text_visible: Optional[np.ndarray] = None

    @field_validator('visible')
    @classmethod
    def _boolean_arrays(cls, value: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        return {name: np.asarray(mask, dtype=bool) for name, mask in value.items()}

    @field_validator('text_visible')
    @classmethod
    def _boolean_text(cls, value: Optional[np.ndarray]) -> Optional[np.ndarray]:
        return None if value is None else np.asarray(value, dtype=bool)

    @model_validator(mode='after')
    def _budget_is_exact(self) -> 'MaskPlan':
        total = sum(int(mask.sum()) for mask in self.visible.values())
        if total != self.visible_budget:
            raise ValueError(f'visible counts sum to {total}, budget is {self.visible_budget}')
        if set(self.ratios) != set(self.visible):
            raise ValueError('ratios and visibility arrays must name the same modalities')
        if self.ratios and abs(sum(self.ratios.values()) - 1.0) > 1e-9:
            raise ValueError(f'ratios must sum to 1, got {sum(self.ratios.values())}')
        return self

    def visible_counts(self) -> Dict[str, int]:
        return {name: int(mask.sum()) for name, mask in self.visible.items()}

    def visible_indices(self, modality: str) -> np.ndarray:
        if modality == 'text':
            return np.flatnonzero(self.text_visible) if self.text_visible is not None else np.zeros(0, np.int64)
        return np.flatnonzero(self.visible[modality])

    def masked(self, modality: str) -> np.ndarray:
        return ~self.visible[modality]


def allocate_budget(ratios: Sequence[float], budget: int, capacities: Sequence[int]) -> np.ndarray:
    """Splits ``budget`` proportionally to ``ratios`` without exceeding any capacity.

    Modalities whose proportional share would overflow are filled and their excess is redistributed over the
    rest in proportion to their ratios; the final split uses largest remainders, ties broken by modality index.
    """
    ratios = np.asarray(ratios, dtype=np.float64)
    capacities = np.asarray(capacities, dtype=np.int64)
    if budget < 0:
        raise MaskingError(f'budget must be non-negative, got {budget}')
    if budget > capacities.sum():
        raise MaskingError(f'budget {budget} exceeds the {int(capacities.sum())} available tokens')

    counts = np.zeros(len(capacities), dtype=np.int64)
    active = capacities > 0
    remaining = budget
    while remaining > 0:
        weights = np.where(active, ratios, 0.0)
        if weights.sum() <= 0.0:
            weights = active.astype(np.float64)
        ideal = weights / weights.sum() * remaining
        headroom = capacities - counts
        full = active & (ideal >= headroom)
        if full.any():
            remaining -= int(headroom[full].sum())
            counts[full] = capacities[full]
            active &= ~full
            continue
        share = np.floor(ideal).astype(np.int64)
        leftover = remaining - int(share.sum())
        order = sorted(np.flatnonzero(active), key=lambda m: (-(ideal[m] - share[m]), m))
        share[order[:leftover]] += 1
        counts += share
        remaining = 0
    return counts


def sample_mask_plan(token_counts: Dict[str, int], budget: int, alpha: Union[float, Sequence[float]], rng: Rng,
                     text_visible: Optional[np.ndarray] = None) -> MaskPlan:
    """Draws modality ratios from Dirichlet(alpha) and picks that many visible tokens per modality uniformly."""
    names = list(token_counts)
    if not names:
        raise MaskingError('a mask plan needs at least one visual modality')
    alpha = np.broadcast_to(np.asarray(alpha, dtype=np.float64), (len(names),))
    if np.any(alpha <= 0):
        raise MaskingError(f'Dirichlet concentration must be positive, got {alpha.tolist()}')

    ratios = rng.split('ratios').dirichlet(alpha) if len(names) > 1 else np.ones(1)
    counts = allocate_budget(ratios, budget, [token_counts[name] for name in names])
    visible = {}
    for name, count in zip(names, counts):
        mask = np.zeros(token_counts[name], dtype=bool)
        if count:
            mask[rng.split(name).choice(token_counts[name], int(count))] = True
        visible[name] = mask
    logger.debug('mask plan: ratios %s, visible %s', np.round(ratios, 3).tolist(), counts.tolist())
    return MaskPlan(visible=visible, ratios=dict(zip(names, ratios.tolist())), visible_budget=budget,
                    text_visible=text_visible)


def full_plan(token_counts: Dict[str, int], text_length: Optional[int] = None,
              text_visible: Optional[np.ndarray] = None) -> MaskPlan:
    """Everything visible: used for evaluation, fine-tuning and the audit geometry."""
    total = sum(token_counts.values())
    if text_visible is None and text_length is not None:
        text_visible = np.ones(text_length, dtype=bool)
    return MaskPlan(visible={name: np.ones(count, dtype=bool) for name, count in token_counts.items()},
                    ratios={name: count / total for name, count in token_counts.items()},
                    visible_budget=total, text_visible=text_visible)
