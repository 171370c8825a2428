"""Forward-latency micro-benchmark of the full model against the Transformer-only variant."""
import logging
import time
from typing import List

import numpy as np
from pydantic import BaseModel
from rich.table import Table
from tqdm import tqdm

from audit import AuditGeometry, estimate_memory
from masking import MaskPlan
from model import M3ET, ModalityBatch, ModelConfig, ablate, draw_plans
from tensor import ConfigError, Rng, no_grad, set_precision

from .synthetic import generate_synthetic

logger = logging.getLogger(__name__)


class LatencyStats(BaseModel):
    label: str
    samples_ms: List[float]
    memory_bytes: int

    @property
    def median_ms(self) -> float:
        return float(np.median(self.samples_ms))

    @property
    def p95_ms(self) -> float:
        return float(np.percentile(self.samples_ms, 95))

    @property
    def iqr_ms(self) -> List[float]:
        return [float(np.percentile(self.samples_ms, 25)), float(np.percentile(self.samples_ms, 75))]


class BenchReport(BaseModel):
    full: LatencyStats
    baseline: LatencyStats

    @property
    def speedup(self) -> float:
        return self.baseline.median_ms / self.full.median_ms


def time_forward(model: M3ET, batch: ModalityBatch, plans: List[MaskPlan], iterations: int, warmup: int,
                 label: str, progress: bool = True) -> List[float]:
    """Wall-clock milliseconds of ``iterations`` evaluation-mode encoder+decoder passes after ``warmup`` untimed
    ones."""
    model.eval()
    samples = []
    with no_grad():
        for i in tqdm(range(warmup + iterations), desc=label, disable=not progress):
            started = time.perf_counter()
            for index, plan in enumerate(plans):
                encoded = model.encode_sample(batch, index, plan)
                for name in model.decoder:
                    model.decode(encoded, name)
            if i >= warmup:
                samples.append(1000.0 * (time.perf_counter() - started))
    return samples


def bench(cfg: ModelConfig, iterations: int, warmup: int = 2, seed: int = 0, precision: str = 'float32',
          progress: bool = True) -> BenchReport:
    """Median and p95 forward latency of ``cfg`` and its no-Mamba variant on the same batch and masks."""
    if iterations <= 0:
        raise ConfigError(f'bench needs a positive iteration count, got {iterations}')
    if warmup < 0:
        raise ConfigError(f'warmup must be non-negative, got {warmup}')
    set_precision(precision)
    batch = generate_synthetic(seed, 1, cfg, 'bench').batch([0], cfg)
    plans = draw_plans(cfg, batch, Rng(seed).split('bench'))

    stats = {}
    for label, variant in (('full', cfg), ('no_mamba', ablate(cfg, 'no_mamba'))):
        model = M3ET(variant, Rng(seed).split('init'))
        samples = time_forward(model, batch, plans, iterations, warmup, label, progress)
        memory = estimate_memory(variant, AuditGeometry.from_config(variant), precision).total_bytes
        stats[label] = LatencyStats(label=label, samples_ms=samples, memory_bytes=memory)
        logger.info('%s: median %.2f ms over %d run(s)', label, stats[label].median_ms, iterations)
    return BenchReport(full=stats['full'], baseline=stats['no_mamba'])


def bench_table(report: BenchReport) -> Table:
    table = Table(title='Forward latency (batch 1)')
    for column in ('config', 'median ms', 'p95 ms', 'IQR ms', 'memory MiB'):
        table.add_column(column, justify='left' if column == 'config' else 'right')
    for stats in (report.full, report.baseline):
        low, high = stats.iqr_ms
        table.add_row(stats.label, f'{stats.median_ms:.2f}', f'{stats.p95_ms:.2f}', f'{low:.2f}-{high:.2f}',
                      f'{stats.memory_bytes / 2 ** 20:.1f}')
    table.caption = f'speedup no_mamba/full: {report.speedup:.2f}x (published figure 2.3x, not reproduced)'
    return table
