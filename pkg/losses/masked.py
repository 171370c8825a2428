"""Reconstruction losses restricted to masked tokens.

Masks mark the elements that contribute (True = masked token, reconstructed and scored). A mask covers the leading
axes of the prediction; trailing axes (the values of a patch) inherit their token's flag. With the default
``'masked'`` normalization the sum is divided by the number of contributing elements; ``'total'`` divides by every
element instead.
"""
import logging
import warnings
from typing import Literal

import numpy as np

from tensor import M3etError, Tensor, abs_, log_softmax, pick, square

logger = logging.getLogger(__name__)

Normalization = Literal['masked', 'total']


class LossError(M3etError, ValueError):
    """Loss inputs disagree in shape or carry invalid labels."""


class EmptyMaskWarning(UserWarning):
    """A loss had no contributing element and returned 0."""


def _expand_mask(mask: np.ndarray, shape) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != tuple(shape[:mask.ndim]):
        raise LossError(f'mask of shape {mask.shape} does not cover the leading axes of {tuple(shape)}')
    return np.broadcast_to(mask.reshape(mask.shape + (1,) * (len(shape) - mask.ndim)), shape)


def _reduce(errors: Tensor, mask: np.ndarray, normalize: Normalization, name: str) -> Tensor:
    weights = _expand_mask(mask, errors.shape)
    count = int(weights.sum())
    if count == 0:
        warnings.warn(f'{name}: no masked element, loss is 0', EmptyMaskWarning, stacklevel=3)
        return (errors * 0.0).sum()
    match normalize:
        case 'masked':
            denominator = count
        case 'total':
            denominator = errors.size
        case _:
            raise LossError(f"unknown normalization '{normalize}'")
    return (errors * Tensor(weights.astype(np.float64))).sum() * (1.0 / denominator)


def _check_pair(pred: Tensor, target: np.ndarray, name: str) -> Tensor:
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise LossError(f'{name}: prediction {pred.shape} and target {target.shape} differ in shape')
    return Tensor(target)


def masked_mse(pred: Tensor, target: np.ndarray, mask: np.ndarray, normalize: Normalization = 'masked') -> Tensor:
    return _reduce(square(pred - _check_pair(pred, target, 'masked_mse')), mask, normalize, 'masked_mse')


def masked_l1(pred: Tensor, target: np.ndarray, mask: np.ndarray, normalize: Normalization = 'masked') -> Tensor:
    return _reduce(abs_(pred - _check_pair(pred, target, 'masked_l1')), mask, normalize, 'masked_l1')


def _token_nll(logits: Tensor, targets: np.ndarray, name: str) -> Tensor:
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != logits.shape[:1]:
        raise LossError(f'{name}: expects [T x C] logits and [T] targets, got {logits.shape} and {targets.shape}')
    classes = logits.shape[1]
    if targets.size and (targets.min() < 0 or targets.max() >= classes):
        raise LossError(f'{name}: class ids must lie in [0, {classes}), got [{targets.min()}, {targets.max()}]')
    return -pick(log_softmax(logits, axis=-1), targets)


def masked_cross_entropy(logits: Tensor, targets: np.ndarray, mask: np.ndarray,
                         normalize: Normalization = 'masked') -> Tensor:
    """Mean of -log softmax(logits)[target] over masked positions."""
    return _reduce(_token_nll(logits, targets, 'masked_cross_entropy'), mask, normalize, 'masked_cross_entropy')


def text_cross_entropy(logits: Tensor, targets: np.ndarray, pad_id: int = 0) -> Tensor:
    """Token-level negative log-likelihood averaged over the non-padding positions."""
    targets = np.asarray(targets, dtype=np.int64)
    return _reduce(_token_nll(logits, targets, 'text_cross_entropy'), targets != pad_id, 'masked',
                   'text_cross_entropy')
