"""On-disk synthetic datasets.

Layout::

    <root>/manifest.json
    <root>/scene_00000/rgb.f32     H*W*3 little-endian float32
    <root>/scene_00000/depth.f32   H*W   little-endian float32, scene units
    <root>/scene_00000/semseg.u8   H*W   class ids
    <root>/scene_00000/text.u8     caption bytes, unpadded
"""
import json
import logging
from pathlib import Path
from typing import List, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from tensor import M3etError

from .synthetic import Scene, SceneObject, SyntheticDataset

logger = logging.getLogger(__name__)

MANIFEST = 'manifest.json'
FORMAT_VERSION = 1


class DatasetError(M3etError, OSError):
    """Missing, truncated or inconsistent dataset files."""


class SceneEntry(BaseModel):
    directory: str
    objects: List[SceneObject]


class Manifest(BaseModel):
    version: int = FORMAT_VERSION
    image_size: int = Field(gt=0)
    seed: int = Field(ge=0, description='Seed the scenes were generated from')
    scenes: List[SceneEntry]


def _scene_dir(index: int) -> str:
    return f'scene_{index:05d}'


def save_dataset(dataset: SyntheticDataset, root: Union[str, Path], seed: int) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, scene in enumerate(dataset.scenes):
        directory = root / _scene_dir(i)
        directory.mkdir(exist_ok=True)
        (directory / 'rgb.f32').write_bytes(scene.rgb.astype('<f4').tobytes())
        (directory / 'depth.f32').write_bytes(scene.depth.astype('<f4').tobytes())
        (directory / 'semseg.u8').write_bytes(scene.semseg.astype(np.uint8).tobytes())
        (directory / 'text.u8').write_bytes(scene.caption.encode('utf-8'))
        entries.append(SceneEntry(directory=_scene_dir(i), objects=scene.objects))
    manifest = Manifest(image_size=dataset.image_size, seed=seed, scenes=entries)
    (root / MANIFEST).write_text(manifest.model_dump_json(indent=2))
    logger.info('wrote %d scene(s) to %s', len(entries), root)
    return root


def _read(path: Path, dtype: str, count: int) -> np.ndarray:
    try:
        data = np.frombuffer(path.read_bytes(), dtype=dtype)
    except OSError as e:
        raise DatasetError(f'cannot read {path}: {e}') from e
    if data.size != count:
        raise DatasetError(f'{path} holds {data.size} value(s), expected {count}')
    return data


def load_dataset(root: Union[str, Path]) -> SyntheticDataset:
    root = Path(root)
    try:
        manifest = Manifest.model_validate_json((root / MANIFEST).read_text())
    except OSError as e:
        raise DatasetError(f'cannot read the dataset manifest in {root}: {e}') from e
    except (ValidationError, json.JSONDecodeError) as e:
        raise DatasetError(f'malformed dataset manifest in {root}: {e}') from e
    if manifest.version != FORMAT_VERSION:
        raise DatasetError(f'dataset format version {manifest.version} is not supported')

    size = manifest.image_size
    scenes = []
    for entry in manifest.scenes:
        directory = root / entry.directory
        rgb = _read(directory / 'rgb.f32', '<f4', size * size * 3).reshape(size, size, 3).astype(np.float64)
        depth = _read(directory / 'depth.f32', '<f4', size * size).reshape(size, size).astype(np.float64)
        semseg = _read(directory / 'semseg.u8', 'u1', size * size).reshape(size, size).astype(np.int64)
        try:
            caption = (directory / 'text.u8').read_bytes().decode('utf-8')
        except (OSError, UnicodeDecodeError) as e:
            raise DatasetError(f'cannot read the caption in {directory}: {e}') from e
        scenes.append(Scene(rgb=rgb, depth=depth, semseg=semseg, caption=caption, objects=entry.objects))
    logger.info('loaded %d scene(s) from %s', len(scenes), root)
    return SyntheticDataset(image_size=size, scenes=scenes)
