import numpy as np

from tensor import ConfigError, Tensor

BASE = 10000.0


def sincos_table(count: int, d: int) -> np.ndarray:
    """Interleaved table: column 2i holds sin(p / BASE^(2i/d)), column 2i+1 the matching cosine."""
    if d % 2:
        raise ConfigError(f'sine-cosine positions need an even dimension, got {d}')
    positions = np.arange(count, dtype=np.float64)[:, None]
    frequencies = BASE ** (-np.arange(0, d, 2, dtype=np.float64) / d)
    table = np.zeros((count, d))
    table[:, 0::2] = np.sin(positions * frequencies)
    table[:, 1::2] = np.cos(positions * frequencies)
    return table


def sincos_positions(count: int, d: int) -> Tensor:
    """Fixed (non-trainable) 1-d positional embeddings of shape [count x d]."""
    return Tensor(sincos_table(count, d))


def sincos_positions_2d(rows: int, cols: int, d: int) -> Tensor:
    """Positions for a row-major patch grid: the first d/2 channels encode the row, the rest the column."""
    if d % 4:
        raise ConfigError(f'2-d sine-cosine positions need a dimension divisible by 4, got {d}')
    row = sincos_table(rows, d // 2)
    col = sincos_table(cols, d // 2)
    grid = np.concatenate([np.repeat(row, cols, axis=0), np.tile(col, (rows, 1))], axis=1)
    return Tensor(grid)
