"""Background batch preparation."""
import logging
import queue
import threading
from typing import Callable, Generic, Iterator, Optional, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar('T')

_DONE = object()


class _Failure:
    def __init__(self, error: BaseException):
        self.error = error


class Prefetcher(Generic[T]):
    """Calls ``produce(step)`` for ``start <= step < stop`` on a worker thread, ``depth`` items ahead.

    Items come out in step order. Every item depends only on its step, so prefetching never changes results. An
    exception in the worker is re-raised in the consumer.
    """

    def __init__(self, produce: Callable[[int], T], start: int, stop: int, depth: int = 2):
        self._produce = produce
        self._start = start
        self._stop = stop
        self._depth = depth
        self._queue: Optional[queue.Queue] = None
        self._stopped = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def _offer(self, item) -> bool:
        while not self._stopped.is_set():
            try:
                self._queue.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def _run(self):
        try:
            for step in range(self._start, self._stop):
                if not self._offer(self._produce(step)):
                    return
            self._offer(_DONE)
        except BaseException as e:
            self._offer(_Failure(e))

    def __iter__(self) -> Iterator[T]:
        if self._depth <= 0:
            for step in range(self._start, self._stop):
                yield self._produce(step)
            return
        self._queue = queue.Queue(maxsize=self._depth)
        self._thread = threading.Thread(target=self._run, name='prefetch', daemon=True)
        self._thread.start()
        try:
            while True:
                item = self._queue.get()
                if item is _DONE:
                    return
                if isinstance(item, _Failure):
                    raise item.error
                yield item
        finally:
            self.close()

    def close(self):
        self._stopped.set()
        if self._thread is not None:
            self._thread.join(timeout=5.0)
            self._thread = None
