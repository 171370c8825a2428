"""Input tensors of the model: patch tokens, byte tokens and the batch container."""
import logging
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from masking import SentenceSpans, sentence_spans
from tensor import ConfigError, ShapeError

from .config import ModelConfig

logger = logging.getLogger(__name__)

_MIN_DEPTH_STD = 1e-6


def patchify(image: np.ndarray, patch: int = 16) -> np.ndarray:
    """[H x W x c] (or [H x W]) -> [(H/p * W/p) x (p*p*c)], patches in row-major order, pixels row-major inside."""
    image = np.asarray(image)
    if image.ndim not in (2, 3):
        raise ShapeError(f'patchify expects an [H x W] or [H x W x c] image, got shape {image.shape}')
    height, width = image.shape[:2]
    if height % patch or width % patch:
        raise ShapeError(f'patch {patch} does not divide image of {height}x{width}')
    channels = image.shape[2] if image.ndim == 3 else 1
    blocks = image.reshape(height // patch, patch, width // patch, patch, channels)
    return blocks.transpose(0, 2, 1, 3, 4).reshape((height // patch) * (width // patch), patch * patch * channels)


def unpatchify(tokens: np.ndarray, patch: int, height: int, width: int, channels: Optional[int] = None) -> np.ndarray:
    """Exact inverse of :func:`patchify`; ``channels=None`` returns an [H x W] image."""
    tokens = np.asarray(tokens)
    c = channels or 1
    rows, cols = height // patch, width // patch
    if tokens.shape != (rows * cols, patch * patch * c):
        raise ShapeError(f'{tokens.shape} tokens do not tile a {height}x{width}x{c} image in {patch}-pixel patches')
    image = tokens.reshape(rows, cols, patch, patch, c).transpose(0, 2, 1, 3, 4).reshape(height, width, c)
    return image if channels is not None else image[:, :, 0]


def tokenize_text(text: str, max_len: int = 128, pad_id: int = 0) -> Tuple[np.ndarray, SentenceSpans]:
    """UTF-8 bytes as token ids, truncated or right-padded to ``max_len``, with the sentence spans."""
    data = text.encode('utf-8').replace(bytes([pad_id]), b'')[:max_len]
    ids = np.full(max_len, pad_id, dtype=np.int64)
    ids[:len(data)] = np.frombuffer(data, dtype=np.uint8)
    return ids, sentence_spans(ids, pad_id)


def detokenize(ids: np.ndarray, pad_id: int = 0) -> str:
    ids = np.asarray(ids)
    content = ids[:np.flatnonzero(ids == pad_id)[0]] if np.any(ids == pad_id) else ids
    return bytes(content.astype(np.uint8).tolist()).decode('utf-8', errors='replace')


def normalize_depth(depth: np.ndarray, percentiles: Tuple[float, float] = (1.0, 99.0)) -> Tuple[np.ndarray,
                                                                                                 np.ndarray]:
    """Clamps to the given percentiles, then standardizes. Returns (normalized, [mean, std])."""
    low, high = np.percentile(depth, percentiles)
    clipped = np.clip(depth, low, high)
    mean = clipped.mean()
    std = max(float(clipped.std()), _MIN_DEPTH_STD)
    return (clipped - mean) / std, np.array([mean, std])


def denormalize_depth(depth: np.ndarray, stats: np.ndarray) -> np.ndarray:
    return depth * stats[1] + stats[0]


class ModalityBatch(BaseModel):
    """A batch of scenes.

    rgb [B x H x W x 3] in [0, 1]; depth [B x H x W x 1], normalized per scene with ``depth_stats`` [B x 2]
    holding (mean, std); semseg [B x H x W] class ids; text [B x L] byte ids, right-padded.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    rgb: Optional[np.ndarray] = None
    depth: Optional[np.ndarray] = None
    semseg: Optional[np.ndarray] = None
    text: Optional[np.ndarray] = None
    depth_stats: Optional[np.ndarray] = None

    @model_validator(mode='after')
    def _consistent(self) -> 'ModalityBatch':
        arrays = {name: getattr(self, name) for name in ('rgb', 'depth', 'semseg', 'text')}
        present = {name: a for name, a in arrays.items() if a is not None}
        if not present:
            raise ShapeError('a batch needs at least one modality')
        sizes = {a.shape[0] for a in present.values()}
        if len(sizes) != 1:
            raise ShapeError(f'batch sizes disagree across modalities: {({n: a.shape for n, a in present.items()})}')
        spatial = {a.shape[1:3] for name, a in present.items() if name != 'text'}
        if len(spatial) > 1:
            raise ShapeError(f'spatial dims differ across visual modalities: {sorted(spatial)}')
        for name, channels in (('rgb', 3), ('depth', 1)):
            if arrays[name] is not None and (arrays[name].ndim != 4 or arrays[name].shape[3] != channels):
                raise ShapeError(f'{name} must be [B x H x W x {channels}], got {arrays[name].shape}')
        if self.semseg is not None and self.semseg.ndim != 3:
            raise ShapeError(f'semseg must be [B x H x W], got {self.semseg.shape}')
        if self.text is not None and self.text.ndim != 2:
            raise ShapeError(f'text must be [B x L], got {self.text.shape}')
        return self

    @property
    def size(self) -> int:
        for name in ('rgb', 'depth', 'semseg', 'text'):
            if getattr(self, name) is not None:
                return getattr(self, name).shape[0]
        return 0

    def check(self, cfg: ModelConfig):
        """Raises if the batch cannot feed a model built from ``cfg``."""
        for name in cfg.input_modalities:
            if getattr(self, name) is None:
                raise ConfigError(f"the model consumes '{name}' but the batch has none")
        for name in cfg.visual_modalities:
            if getattr(self, name).shape[1:3] != (cfg.image_size, cfg.image_size):
                raise ShapeError(f'{name} images must be {cfg.image_size}x{cfg.image_size}, got '
                                 f'{getattr(self, name).shape[1:3]}')
        if 'semseg' in cfg.visual_modalities and (self.semseg.min() < 0 or self.semseg.max() >= cfg.semseg_classes):
            raise ShapeError(f'semseg ids must lie in [0, {cfg.semseg_classes})')
        if cfg.text_active:
            if self.text.shape[1] != cfg.text_len:
                raise ShapeError(f'text must hold {cfg.text_len} tokens, got {self.text.shape[1]}')
            if self.text.min() < 0 or self.text.max() >= cfg.vocab:
                raise ShapeError(f'text ids must lie in [0, {cfg.vocab})')

    def select(self, indices) -> 'ModalityBatch':
        take = {name: None if getattr(self, name) is None else getattr(self, name)[indices]
                for name in ('rgb', 'depth', 'semseg', 'text', 'depth_stats')}
        return ModalityBatch(**take)

    def spans(self, index: int, pad_id: int = 0) -> SentenceSpans:
        return sentence_spans(self.text[index], pad_id)

    @classmethod
    def from_raw(cls, rgb: Optional[np.ndarray] = None, depth: Optional[np.ndarray] = None,
                 semseg: Optional[np.ndarray] = None, text: Optional[np.ndarray] = None,
                 percentiles: Tuple[float, float] = (1.0, 99.0)) -> 'ModalityBatch':
        """Builds a batch from raw scenes; depth [B x H x W] in metric units is normalized per scene."""
        depth_stats = None
        if depth is not None:
            normalized: List[np.ndarray] = []
            stats: List[np.ndarray] = []
            for scene in depth:
                scene_depth, scene_stats = normalize_depth(scene, percentiles)
                normalized.append(scene_depth)
                stats.append(scene_stats)
            depth = np.stack(normalized)[..., None]
            depth_stats = np.stack(stats)
        return cls(rgb=None if rgb is None else np.asarray(rgb, dtype=np.float64), depth=depth,
                   semseg=None if semseg is None else np.asarray(semseg, dtype=np.int64),
                   text=None if text is None else np.asarray(text, dtype=np.int64), depth_stats=depth_stats)
