"""Component ablations: the full model against three variants, each with one part removed."""
import logging
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel
from rich.table import Table

from audit import estimate_flops
from model import ABLATIONS, ablate

from .config import RunConfig
from .train import pretrain

logger = logging.getLogger(__name__)

CONFIGS: Tuple[str, ...] = ('full',) + ABLATIONS

# Published figures for the four configurations at full scale: (RGB PSNR dB, VQA accuracy %, GFLOPs). The desk
# runs do not reproduce them; they are printed for orientation only.
PAPER_REFERENCE: Dict[str, Tuple[float, float, float]] = {
    'full': (18.30, 74.18, 9.08),
    'no_text': (17.62, 70.1, 9.66),
    'no_mamba': (16.53, 72.4, 9.96),
    'no_cross_attention': (16.23, 69.0, 9.73),
}

# Published efficiency figures of the full model against its Transformer-only baseline.
PAPER_EFFICIENCY: Dict[str, float] = {
    'baseline_params_m': 195.97,
    'params_m': 65.39,
    'param_reduction_pct': 66.63,
    'memory_reduction_pct': 73.2,
    'inference_speedup': 2.3,
    'transformer_layer_params_m': 7.09,
    'mamba_block_params_k': 100.67,
}


class AblationRow(BaseModel):
    name: str
    params: int
    flops: int
    psnr: Optional[float] = None


class AblationTable(BaseModel):
    rows: List[AblationRow]

    def row(self, name: str) -> AblationRow:
        return next(r for r in self.rows if r.name == name)


def run_ablations(base: RunConfig, train: bool = True, progress: bool = True) -> AblationTable:
    """Audits the four configurations at the base geometry and, with ``train``, pretrains each with the base seed
    under ``<output_dir>/<name>`` and records its final held-out PSNR."""
    rows = []
    for name in CONFIGS:
        cfg = base.model if name == 'full' else ablate(base.model, name)
        report = estimate_flops(cfg, label=name)
        psnr = None
        if train:
            run = base.model_copy(update={'model': cfg, 'output_dir': str(base.output_path / name)})
            result = pretrain(run, progress=progress)
            psnr = result.evals[-1].psnr if result.evals else None
            logger.info('%s: final held-out PSNR %s', name, f'{psnr:.2f} dB' if psnr is not None else 'n/a')
        rows.append(AblationRow(name=name, params=report.total_params, flops=report.total_flops, psnr=psnr))
    return AblationTable(rows=rows)


def ablation_table(table: AblationTable) -> Table:
    rich_table = Table(title='Ablations (desk run)  |  published full-scale values for reference only')
    for column in ('config', 'PSNR (dB)', 'GFLOPs', 'params', 'ref PSNR', 'ref VQA %', 'ref GFLOPs'):
        rich_table.add_column(column, justify='left' if column == 'config' else 'right')
    for row in table.rows:
        ref_psnr, ref_vqa, ref_gflops = PAPER_REFERENCE[row.name]
        rich_table.add_row(row.name, 'n/a' if row.psnr is None else f'{row.psnr:.2f}', f'{row.flops / 1e9:.3f}',
                           f'{row.params:,}', f'{ref_psnr:.2f}', f'{ref_vqa:.2f}', f'{ref_gflops:.2f}',
                           style='dim' if row.name != 'full' else None)
    return rich_table
