from typing import Sequence, TypeVar

from tensor import Rng

from .plan import MaskingError

T = TypeVar('T')


def select_task(tasks: Sequence[T], rng: Rng) -> T:
    """Picks one task uniformly."""
    if not tasks:
        raise MaskingError('cannot select a task from an empty list')
    return tasks[int(rng.integers(0, len(tasks)))]
