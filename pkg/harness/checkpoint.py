"""Binary checkpoints.

All integers are little-endian::

    magic        8 bytes   b'M3ETCKPT'
    version      u32
    header_len   u32, then header_len bytes of UTF-8 JSON (sorted keys, compact)
    count        u32, then ``count`` directory entries:
        name_len u16, name (UTF-8)
        dtype    u8   (1 = float32, 2 = float64, 3 = int64)
        ndim     u8, then ndim x u32 dims
        offset   u64  byte offset into the payload
        nbytes   u64
    payload      the tensors, little-endian, in directory order
    crc32        u32 of everything before it

The header holds the run configuration, the completed step count and the precision.
"""
import json
import logging
import os
import struct
import zlib
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from tensor import M3etError, ShapeError

logger = logging.getLogger(__name__)

MAGIC = b'M3ETCKPT'
VERSION = 1
DTYPE_CODES: Dict[str, int] = {'float32': 1, 'float64': 2, 'int64': 3}
CODE_DTYPES: Dict[int, str] = {code: name for name, code in DTYPE_CODES.items()}

MODEL_PREFIX = 'model.'
OPTIMIZER_PREFIX = 'optim.'


class CheckpointError(M3etError, OSError):
    """Unreadable, corrupted or mismatched checkpoint."""


class Checkpoint(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    header: Dict = Field(default_factory=dict)
    tensors: Dict[str, np.ndarray] = Field(default_factory=dict)

    @property
    def step(self) -> int:
        return int(self.header.get('step', 0))

    def group(self, prefix: str) -> Dict[str, np.ndarray]:
        return {name[len(prefix):]: value for name, value in self.tensors.items() if name.startswith(prefix)}


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    header = json.dumps(checkpoint.header, sort_keys=True, separators=(',', ':')).encode('utf-8')
    directory = bytearray()
    payload = bytearray()
    for name, value in checkpoint.tensors.items():
        dtype = np.dtype(value.dtype).name
        if dtype not in DTYPE_CODES:
            raise CheckpointError(f"tensor '{name}' has unsupported dtype {dtype}")
        data = np.ascontiguousarray(value, dtype=np.dtype(dtype).newbyteorder('<')).tobytes()
        encoded_name = name.encode('utf-8')
        directory += struct.pack('<H', len(encoded_name)) + encoded_name
        directory += struct.pack('<BB', DTYPE_CODES[dtype], value.ndim)
        directory += struct.pack(f'<{value.ndim}I', *value.shape)
        directory += struct.pack('<QQ', len(payload), len(data))
        payload += data
    body = (MAGIC + struct.pack('<I', VERSION) + struct.pack('<I', len(header)) + header
            + struct.pack('<I', len(checkpoint.tensors)) + bytes(directory) + bytes(payload))
    return body + struct.pack('<I', zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.position = 0

    def take(self, count: int) -> bytes:
        if self.position + count > len(self.data):
            raise CheckpointError('checkpoint is truncated')
        chunk = self.data[self.position:self.position + count]
        self.position += count
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < len(MAGIC) + 16 or data[:len(MAGIC)] != MAGIC:
        raise CheckpointError('not a checkpoint file (bad magic)')
    body, (stored_crc,) = data[:-4], struct.unpack('<I', data[-4:])
    if zlib.crc32(body) != stored_crc:
        raise CheckpointError('checkpoint checksum mismatch')

    reader = _Reader(body)
    reader.take(len(MAGIC))
    (version,) = reader.unpack('<I')
    if version != VERSION:
        raise CheckpointError(f'checkpoint format version {version} is not supported')
    (header_len,) = reader.unpack('<I')
    try:
        header = json.loads(reader.take(header_len).decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f'malformed checkpoint header: {e}') from e

    (count,) = reader.unpack('<I')
    entries = []
    for _ in range(count):
        (name_len,) = reader.unpack('<H')
        name = reader.take(name_len).decode('utf-8')
        code, ndim = reader.unpack('<BB')
        if code not in CODE_DTYPES:
            raise CheckpointError(f"tensor '{name}' has unknown dtype code {code}")
        shape = reader.unpack(f'<{ndim}I')
        offset, nbytes = reader.unpack('<QQ')
        entries.append((name, CODE_DTYPES[code], shape, offset, nbytes))

    payload = body[reader.position:]
    tensors: Dict[str, np.ndarray] = {}
    for name, dtype, shape, offset, nbytes in entries:
        if name in tensors:
            raise CheckpointError(f"tensor '{name}' appears twice")
        item = np.dtype(dtype).newbyteorder('<')
        if nbytes != item.itemsize * int(np.prod(shape, dtype=np.int64)) or offset + nbytes > len(payload):
            raise CheckpointError(f"tensor '{name}' does not fit the payload")
        array = np.frombuffer(payload, dtype=item, count=nbytes // item.itemsize, offset=offset)
        tensors[name] = array.reshape(shape).astype(dtype)
    return Checkpoint(header=header, tensors=tensors)


def save_checkpoint(checkpoint: Checkpoint, path: Union[str, Path]) -> Path:
    """Writes through a temporary file and an atomic rename, so a crash leaves the previous checkpoint intact."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    temporary = path.with_name(f'{path.name}.tmp.{os.getpid()}')
    try:
        temporary.write_bytes(encode_checkpoint(checkpoint))
        os.replace(temporary, path)
    finally:
        if temporary.exists():
            temporary.unlink()
    logger.debug('saved checkpoint %s (%d tensors)', path, len(checkpoint.tensors))
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f'cannot read checkpoint {path}: {e}') from e
    return decode_checkpoint(data)


def snapshot(model, optimizer=None, header: Dict = None) -> Checkpoint:
    """Model parameters (and optimizer moments) under their prefixes, copied so later updates do not leak in."""
    tensors = {f'{MODEL_PREFIX}{name}': value.copy() for name, value in model.state_dict().items()}
    header = dict(header or {})
    if optimizer is not None:
        tensors.update({f'{OPTIMIZER_PREFIX}{name}': value.copy()
                        for name, value in optimizer.state_arrays().items()})
        header['optimizer_step'] = optimizer.step_count
    return Checkpoint(header=header, tensors=tensors)


def restore(checkpoint: Checkpoint, model, optimizer=None):
    try:
        model.load_state_dict(checkpoint.group(MODEL_PREFIX))
        if optimizer is not None:
            optimizer.load_state_arrays(int(checkpoint.header.get('optimizer_step', 0)),
                                        checkpoint.group(OPTIMIZER_PREFIX))
    except (KeyError, ShapeError) as e:
        raise CheckpointError(f'checkpoint does not match the model: {e}') from e
