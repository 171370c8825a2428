"""Reconstruction and prediction quality metrics on plain arrays."""
import numpy as np

from tensor import ShapeError

PSNR_CAP_DB = 99.0


def _same_shape(a: np.ndarray, b: np.ndarray, name: str):
    if a.shape != b.shape:
        raise ShapeError(f'{name} needs equal shapes, got {a.shape} and {b.shape}')


def psnr(prediction: np.ndarray, target: np.ndarray, peak: float = 1.0) -> float:
    """10 * log10(peak^2 / MSE) in dB; identical images give the 99 dB cap."""
    prediction, target = np.asarray(prediction, np.float64), np.asarray(target, np.float64)
    _same_shape(prediction, target, 'psnr')
    mse = float(np.mean((prediction - target) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(peak * peak / mse))


def depth_rmse(prediction: np.ndarray, target: np.ndarray) -> float:
    prediction, target = np.asarray(prediction, np.float64), np.asarray(target, np.float64)
    _same_shape(prediction, target, 'depth_rmse')
    return float(np.sqrt(np.mean((prediction - target) ** 2)))


def mean_iou(prediction: np.ndarray, target: np.ndarray, classes: int) -> float:
    """Mean intersection-over-union over the classes present in either map."""
    prediction, target = np.asarray(prediction), np.asarray(target)
    _same_shape(prediction, target, 'mean_iou')
    scores = []
    for c in range(classes):
        union = np.logical_or(prediction == c, target == c).sum()
        if union:
            scores.append(np.logical_and(prediction == c, target == c).sum() / union)
    return float(np.mean(scores)) if scores else 1.0


def token_accuracy(prediction: np.ndarray, target: np.ndarray, pad_id: int = 0) -> float:
    """Fraction of non-padding target tokens predicted exactly."""
    prediction, target = np.asarray(prediction), np.asarray(target)
    _same_shape(prediction, target, 'token_accuracy')
    keep = target != pad_id
    if not keep.any():
        return 1.0
    return float((prediction[keep] == target[keep]).mean())
