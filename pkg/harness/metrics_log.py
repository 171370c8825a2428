"""Line-per-record run logs.

``metrics.jsonl`` holds only values fixed by (seed, config, precision), so two identical runs write identical
files. Wall-clock times go to ``timing.jsonl``.
"""
import threading
from copy import copy
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

from pydantic import BaseModel, Field, TypeAdapter


class StepRecord(BaseModel):
    kind: Literal['step'] = 'step'
    step: int
    total: float
    components: Dict[str, float]
    lr: float


class EvalRecord(BaseModel):
    kind: Literal['eval'] = 'eval'
    step: int
    psnr: float
    depth_rmse: Optional[float] = None
    miou: Optional[float] = None
    token_accuracy: Optional[float] = None


class TimingRecord(BaseModel):
    step: int
    wall_ms: float


Record = Union[StepRecord, EvalRecord]
_RECORD = TypeAdapter(Record)


class MetricsLog:
    """Appends records to the run's log files; safe to share with a worker thread."""

    def __init__(self, directory: Union[str, Path]):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.metrics_path = self.directory / 'metrics.jsonl'
        self.timing_path = self.directory / 'timing.jsonl'
        self._lock = threading.Lock()
        self._records: List[Record] = []

    def append(self, record: Record):
        with self._lock:
            self._records.append(record)
            with self.metrics_path.open('a') as f:
                f.write(record.model_dump_json() + '\n')

    def time(self, step: int, wall_ms: float):
        with self._lock, self.timing_path.open('a') as f:
            f.write(TimingRecord(step=step, wall_ms=wall_ms).model_dump_json() + '\n')

    def records(self) -> List[Record]:
        with self._lock:
            return copy(self._records)

    def steps(self) -> List[StepRecord]:
        return [r for r in self.records() if isinstance(r, StepRecord)]

    def evals(self) -> List[EvalRecord]:
        return [r for r in self.records() if isinstance(r, EvalRecord)]

    def reset(self):
        """Starts both files afresh."""
        with self._lock:
            self._records = []
            self.metrics_path.write_text('')
            self.timing_path.write_text('')

    def resume(self, step: int):
        """Reloads the records up to ``step`` and drops anything a crashed run logged after it."""
        with self._lock:
            self._records = [r for r in read_metrics(self.metrics_path) if r.step <= step]
            self.metrics_path.write_text(''.join(r.model_dump_json() + '\n' for r in self._records))
            if self.timing_path.exists():
                timings = [TimingRecord.model_validate_json(line)
                           for line in self.timing_path.read_text().splitlines() if line.strip()]
                self.timing_path.write_text(''.join(t.model_dump_json() + '\n' for t in timings if t.step <= step))


def read_metrics(path: Union[str, Path]) -> List[Record]:
    path = Path(path)
    if not path.exists():
        return []
    return [_RECORD.validate_json(line) for line in path.read_text().splitlines() if line.strip()]
