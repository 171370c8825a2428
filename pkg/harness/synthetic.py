"""Procedural multimodal scenes.

A scene is a few flat-colored shapes over a dark background. The RGB image, the depth map (objects drawn later are
closer), the class map and the caption are derived from the same object list, so all four modalities agree.
"""
import logging
from typing import Dict, List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from model import ModalityBatch, ModelConfig, tokenize_text
from tensor import ConfigError, Rng

logger = logging.getLogger(__name__)

SHAPES: Tuple[str, ...] = ('circle', 'square', 'triangle')
COLORS: Dict[str, Tuple[float, float, float]] = {
    'red': (0.9, 0.1, 0.1),
    'green': (0.1, 0.8, 0.2),
    'blue': (0.1, 0.2, 0.9),
    'yellow': (0.95, 0.9, 0.1),
    'white': (0.95, 0.95, 0.95),
}
MAX_OBJECTS = 3
FAR_DEPTH = 8.0
NEAR_DEPTH = 2.0


class SceneObject(BaseModel):
    shape: str
    color: str
    center: Tuple[float, float]
    radius: float
    depth: float

    @property
    def class_id(self) -> int:
        return SHAPES.index(self.shape) + 1


class Scene(BaseModel):
    """rgb [H x W x 3] in [0, 1]; depth [H x W] in scene units; semseg [H x W] with 0 = background."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    rgb: np.ndarray
    depth: np.ndarray
    semseg: np.ndarray
    caption: str
    objects: List[SceneObject]


class SyntheticDataset(BaseModel):
    image_size: int
    scenes: List[Scene]

    def __len__(self) -> int:
        return len(self.scenes)

    def batch(self, indices: Sequence[int], cfg: ModelConfig) -> ModalityBatch:
        """Stacks the chosen scenes, tokenizes captions to ``cfg.text_len`` and normalizes depth."""
        if self.image_size != cfg.image_size:
            raise ConfigError(f'scenes are {self.image_size} pixels, the model expects {cfg.image_size}')
        scenes = [self.scenes[i] for i in indices]
        text = np.stack([tokenize_text(s.caption, cfg.text_len, cfg.pad_id)[0] for s in scenes])
        return ModalityBatch.from_raw(rgb=np.stack([s.rgb for s in scenes]),
                                      depth=np.stack([s.depth for s in scenes]),
                                      semseg=np.stack([s.semseg for s in scenes]), text=text,
                                      percentiles=cfg.depth_percentiles)


def _shape_mask(shape: str, center: Tuple[float, float], radius: float, size: int) -> np.ndarray:
    y, x = np.mgrid[0:size, 0:size] + 0.5
    cx, cy = center
    match shape:
        case 'circle':
            return (x - cx) ** 2 + (y - cy) ** 2 <= radius ** 2
        case 'square':
            return (np.abs(x - cx) <= radius) & (np.abs(y - cy) <= radius)
        case 'triangle':
            top = cy - radius
            return (y >= top) & (y <= cy + radius) & (np.abs(x - cx) <= (y - top) / 2.0)
        case _:
            raise ConfigError(f"unknown shape '{shape}'")


def caption_for(objects: List[SceneObject]) -> str:
    """One sentence per object, left to right: 'a red circle. a blue square.'"""
    ordered = sorted(objects, key=lambda o: o.center[0])
    return ' '.join(f'a {o.color} {o.shape}.' for o in ordered)


def generate_scene(rng: Rng, size: int, classes: int) -> Scene:
    shapes = SHAPES[:classes - 1]
    background = rng.uniform(3, 0.1, 0.3)
    rgb = np.broadcast_to(background, (size, size, 3)).copy()
    rows = (np.arange(size) + 0.5) / size
    depth = np.broadcast_to((FAR_DEPTH + 2.0 * (1.0 - rows))[:, None], (size, size)).copy()
    semseg = np.zeros((size, size), dtype=np.int64)

    objects = []
    count = int(rng.integers(1, MAX_OBJECTS + 1))
    color_names = list(COLORS)
    for i in range(count):
        radius = float(rng.uniform(None, size / 8.0, size / 4.0))
        center = (float(rng.uniform(None, radius, size - radius)), float(rng.uniform(None, radius, size - radius)))
        obj = SceneObject(shape=shapes[int(rng.integers(0, len(shapes)))],
                          color=color_names[int(rng.integers(0, len(color_names)))],
                          center=center, radius=radius,
                          depth=FAR_DEPTH - (FAR_DEPTH - NEAR_DEPTH) * (i + 1) / (MAX_OBJECTS + 1))
        mask = _shape_mask(obj.shape, obj.center, obj.radius, size)
        if not mask.any():
            continue
        rgb[mask] = COLORS[obj.color]
        depth[mask] = obj.depth
        semseg[mask] = obj.class_id
        objects.append(obj)

    rgb = np.clip(rgb + rng.normal((size, size, 3), std=0.02), 0.0, 1.0)
    return Scene(rgb=rgb, depth=depth, semseg=semseg, caption=caption_for(objects), objects=objects)


def generate_synthetic(seed: int, n_scenes: int, cfg: ModelConfig, stream: str = 'train') -> SyntheticDataset:
    """``n_scenes`` scenes matching the configured image size and class count; identical for identical
    arguments."""
    if cfg.semseg_classes < 2:
        raise ConfigError('synthetic scenes need at least one object class besides background')
    rng = Rng(seed).split('synthetic').split(stream)
    scenes = [generate_scene(rng.split(i), cfg.image_size, cfg.semseg_classes) for i in range(n_scenes)]
    logger.debug('generated %d %s scene(s) of %d pixels', n_scenes, stream, cfg.image_size)
    return SyntheticDataset(image_size=cfg.image_size, scenes=scenes)
