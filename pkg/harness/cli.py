"""The subcommands of the ``m3et`` tool."""
import json
import logging
from pathlib import Path
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, Field
from rich.console import Console
from rich.table import Table

from audit import (AuditGeometry, audit_table, compare, comparison_table, estimate_flops, estimate_memory,
                   mamba_block_params, transformer_layer_params)
from model import ModelConfig, ablate, draw_plans
from tensor import Rng

from .ablations import PAPER_EFFICIENCY, ablation_table, run_ablations
from .bench import bench, bench_table
from .commands import HarnessCommand, load_config_file
from .config import FinetuneConfig, OptimizerConfig, RunConfig
from .dataset_io import save_dataset
from .finetune import finetune
from .metrics import depth_rmse, mean_iou, psnr, token_accuracy
from .synthetic import generate_synthetic
from .train import load_model, pretrain, reconstruction_images
from .verify import gradient_suite, masking_statistics_suite, ssm_equivalence_suite, suite_table

logger = logging.getLogger(__name__)

console = Console()

Preset = Literal['paper', 'paper_flops_reference', 'desk', 'toy']

# exit code of a verification suite that ran but did not pass
CHECKS_FAILED = 2


class RunRequest(BaseModel):
    config: Optional[Path] = Field(default=None, description='JSON run configuration; flags override its values')
    paper_scale: Optional[bool] = Field(default=None, description='Start from the full-size run instead of the '
                                                                  'desk-scale one')
    iterations: Optional[int] = Field(default=None, gt=0, description='Training steps')
    batch_size: Optional[int] = Field(default=None, gt=0, description='Scenes per step')
    seed: Optional[int] = Field(default=None, ge=0, description='Run seed')
    lr: Optional[float] = Field(default=None, gt=0.0, description='Peak learning rate')
    output_dir: Optional[str] = Field(default=None, description='Directory for logs and checkpoints')
    precision: Optional[Literal['float32', 'float64']] = Field(default=None, description='Floating-point precision')
    finite_audit: Optional[bool] = Field(default=None, description='Check every operation for NaN/Inf')
    eval_every: Optional[int] = Field(default=None, gt=0, description='Steps between held-out evaluations')
    checkpoint_every: Optional[int] = Field(default=None, gt=0, description='Steps between checkpoints')
    train_scenes: Optional[int] = Field(default=None, gt=0, description='Synthetic training scenes')
    data_dir: Optional[str] = Field(default=None, description='Train on a gen-data directory')

    def run_config(self) -> RunConfig:
        base = load_config_file(self.config, RunConfig) if self.config is not None else \
            (RunConfig.paper() if self.paper_scale else RunConfig.desk())
        values = base.model_dump()
        for name in ('iterations', 'batch_size', 'seed', 'output_dir', 'precision', 'finite_audit', 'eval_every',
                     'checkpoint_every', 'train_scenes', 'data_dir'):
            if getattr(self, name) is not None:
                values[name] = getattr(self, name)
        if self.lr is not None:
            values['optimizer'] = {**values['optimizer'], 'lr': self.lr}
        return RunConfig.model_validate(values)


class PretrainRequest(RunRequest):
    resume: Optional[bool] = Field(default=None, description='Continue from the checkpoint in the output directory')


class PretrainCommand(HarnessCommand[PretrainRequest]):
    def get_name(self) -> str:
        return 'pretrain'

    def get_description(self) -> str:
        return 'Masked multimodal pretraining on synthetic scenes (desk scale unless --paper-scale).'

    def execute(self, request: PretrainRequest) -> int:
        run = request.run_config()
        result = pretrain(run, resume=bool(request.resume))
        table = Table(title=f'Held-out evaluation ({run.output_dir})')
        for column in ('step', 'PSNR dB', 'depth RMSE', 'mIoU', 'token acc'):
            table.add_column(column, justify='right')
        for record in result.evals:
            table.add_row(str(record.step), f'{record.psnr:.2f}',
                          *('n/a' if v is None else f'{v:.3f}'
                            for v in (record.depth_rmse, record.miou, record.token_accuracy)))
        console.print(table)
        if result.steps:
            console.print(f'final loss {result.steps[-1].total:.4f}; checkpoint {result.checkpoint}')
        return 0


class AuditRequest(BaseModel):
    preset: Preset = Field(default='paper', description='Model configuration to audit')
    versus: Optional[Literal['no_text', 'no_mamba', 'no_cross_attention']] = Field(
        default='no_mamba', description='Ablation to compare against')
    blocks: Optional[bool] = Field(default=None, description='Print the per-block table')
    output: Optional[Path] = Field(default=None, description='Write the per-block records as JSON lines')


class AuditCommand(HarnessCommand[AuditRequest]):
    def get_name(self) -> str:
        return 'audit'

    def get_description(self) -> str:
        return 'Exact parameter counts, FLOPs and memory estimates of a configuration and one ablation.'

    def execute(self, request: AuditRequest) -> int:
        cfg = ModelConfig.preset(request.preset)
        geometry = AuditGeometry.from_config(cfg)
        report = estimate_flops(cfg, geometry, label=request.preset)
        console.print(f'transformer layer (d={cfg.d_encoder}): '
                      f'{transformer_layer_params(cfg.d_encoder, cfg.mlp_ratio):,} parameters')
        console.print(f'mamba block ({cfg.d_encoder}->{cfg.mamba.d_inner}->{cfg.d_encoder}): '
                      f'{mamba_block_params(cfg.d_encoder, cfg.mamba.d_inner):,} parameters')
        memory = estimate_memory(cfg, geometry)
        console.print(f'{request.preset}: total {report.total_params:,} parameters, '
                      f'{report.total_flops / 1e9:.3f} GFLOPs, '
                      f'{memory.total_bytes / 2 ** 20:.1f} MiB at inference (float32)')
        if request.blocks:
            console.print(audit_table(report))
        if request.versus is not None:
            other = estimate_flops(ablate(cfg, request.versus), label=request.versus)
            console.print(comparison_table(compare(other, report)))
            if request.preset == 'paper' and request.versus == 'no_mamba':
                console.print('paper swaps six encoder layers; --preset paper_flops_reference swaps one')
        if request.output is not None:
            request.output.write_text(report.to_jsonl())
        return 0


class AblateRequest(RunRequest):
    train: Optional[bool] = Field(default=None, description='Train every configuration (--no-train: audit only)')


class AblateCommand(HarnessCommand[AblateRequest]):
    def get_name(self) -> str:
        return 'ablate'

    def get_description(self) -> str:
        return 'Full model against the no-text, no-Mamba and no-cross-attention variants.'

    def execute(self, request: AblateRequest) -> int:
        table = run_ablations(request.run_config(), train=request.train is not False)
        console.print(ablation_table(table))
        console.print('published efficiency figures (reference only): '
                      + ', '.join(f'{k}={v}' for k, v in PAPER_EFFICIENCY.items()))
        return 0


class BenchRequest(BaseModel):
    preset: Preset = Field(default='paper', description='Model configuration to time')
    iterations: int = Field(default=5, gt=0, description='Timed forward passes per configuration')
    warmup: int = Field(default=2, ge=0, description='Untimed passes before timing')
    seed: int = Field(default=0, ge=0, description='Seed of the benchmark scene and masks')
    precision: Literal['float32', 'float64'] = Field(default='float32', description='Floating-point precision')


class BenchCommand(HarnessCommand[BenchRequest]):
    def get_name(self) -> str:
        return 'bench'

    def get_description(self) -> str:
        return 'Median and p95 forward latency of the full model against the no-Mamba variant.'

    def execute(self, request: BenchRequest) -> int:
        report = bench(ModelConfig.preset(request.preset), request.iterations, request.warmup, request.seed,
                       request.precision)
        console.print(bench_table(report))
        return 0


class GradcheckRequest(BaseModel):
    seed: int = Field(default=0, ge=0, description='Seed of the checked inputs')
    max_elements: int = Field(default=24, gt=0, description='Elements checked per tensor')


class GradcheckCommand(HarnessCommand[GradcheckRequest]):
    def get_name(self) -> str:
        return 'gradcheck'

    def get_description(self) -> str:
        return 'Finite-difference gradient checks of every block and of the toy model (64-bit).'

    def execute(self, request: GradcheckRequest) -> int:
        result = gradient_suite(request.seed, request.max_elements)
        console.print(suite_table([result]))
        return 0 if result.passed else CHECKS_FAILED


class VerifyRequest(BaseModel):
    suite: Literal['all', 'ssm', 'masking'] = Field(default='all', description='Suite to run')
    instances: int = Field(default=100, gt=0, description='Random SSM instances')
    draws: int = Field(default=10_000, gt=0, description='Masking draws')
    seed: int = Field(default=0, ge=0, description='Suite seed')


class VerifyCommand(HarnessCommand[VerifyRequest]):
    def get_name(self) -> str:
        return 'verify'

    def get_description(self) -> str:
        return 'SSM form equivalence and masking statistics suites.'

    def execute(self, request: VerifyRequest) -> int:
        results = []
        if request.suite in ('all', 'ssm'):
            results.append(ssm_equivalence_suite(request.instances, request.seed))
        if request.suite in ('all', 'masking'):
            results.append(masking_statistics_suite(request.draws, request.seed))
        console.print(suite_table(results))
        return 0 if all(r.passed for r in results) else CHECKS_FAILED


class ReconstructRequest(BaseModel):
    checkpoint: Path = Field(description='Pretraining checkpoint')
    output_dir: Path = Field(description='Directory receiving the .npy maps and summary.json')
    scene: int = Field(default=0, ge=0, description='Held-out scene index')
    seed: int = Field(default=0, ge=0, description='Seed of the mask plan')


class ReconstructionSummary(BaseModel):
    step: int
    scene: int
    psnr: Optional[float] = None
    depth_rmse: Optional[float] = None
    miou: Optional[float] = None
    token_accuracy: Optional[float] = None
    visible: dict
    files: List[str]


class ReconstructCommand(HarnessCommand[ReconstructRequest]):
    def get_name(self) -> str:
        return 'reconstruct'

    def get_description(self) -> str:
        return 'Masks a held-out scene and writes the model reconstructions.'

    def execute(self, request: ReconstructRequest) -> int:
        model, run, step = load_model(request.checkpoint)
        cfg = model.cfg
        dataset = generate_synthetic(run.seed, max(request.scene + 1, run.eval_scenes), cfg, 'eval')
        batch = dataset.batch([request.scene], cfg)
        plan = draw_plans(cfg, batch, Rng(request.seed).split('reconstruct'))[0]
        images = reconstruction_images(model, batch, 0, plan)

        request.output_dir.mkdir(parents=True, exist_ok=True)
        files = []
        for name, image in images.items():
            np.save(request.output_dir / f'{name}.npy', image)
            files.append(f'{name}.npy')
        summary = ReconstructionSummary(
            step=step, scene=request.scene, visible={k: int(v) for k, v in plan.visible_counts().items()},
            files=files,
            psnr=psnr(images['rgb'], batch.rgb[0]) if 'rgb' in images else None,
            depth_rmse=depth_rmse(images['depth'], batch.depth[0]) if 'depth' in images else None,
            miou=mean_iou(images['semseg'], batch.semseg[0], cfg.semseg_classes) if 'semseg' in images else None,
            token_accuracy=token_accuracy(images['text'], batch.text[0], cfg.pad_id) if 'text' in images else None)
        (request.output_dir / 'summary.json').write_text(summary.model_dump_json(indent=2))
        console.print_json(summary.model_dump_json())
        return 0


class GenDataRequest(BaseModel):
    output_dir: Path = Field(description='Dataset directory to create')
    scenes: int = Field(default=64, gt=0, description='Number of scenes')
    seed: int = Field(default=0, ge=0, description='Generator seed')
    preset: Preset = Field(default='desk', description='Configuration fixing image size and class count')


class GenDataCommand(HarnessCommand[GenDataRequest]):
    def get_name(self) -> str:
        return 'gen-data'

    def get_description(self) -> str:
        return 'Writes procedural RGB, depth, semseg and caption scenes to disk.'

    def execute(self, request: GenDataRequest) -> int:
        cfg = ModelConfig.preset(request.preset)
        save_dataset(generate_synthetic(request.seed, request.scenes, cfg), request.output_dir, request.seed)
        console.print(f'{request.scenes} scene(s) written to {request.output_dir}')
        return 0


class FinetuneRequest(RunRequest):
    checkpoint: Optional[Path] = Field(default=None, description='Pretrained checkpoint to start from')
    steps: Optional[int] = Field(default=None, gt=0, description='Fine-tuning steps')
    finetune_lr: Optional[float] = Field(default=None, gt=0.0, description='Fine-tuning peak learning rate')


class FinetuneCommand(HarnessCommand[FinetuneRequest]):
    def get_name(self) -> str:
        return 'finetune'

    def get_description(self) -> str:
        return 'Caption matching on top of the pretrained encoder.'

    def execute(self, request: FinetuneRequest) -> int:
        values = {'run': request.run_config()}
        if request.checkpoint is not None:
            values['checkpoint'] = str(request.checkpoint)
            values['run'] = load_model(request.checkpoint)[1]
        if request.steps is not None:
            values['steps'] = request.steps
        if request.finetune_lr is not None:
            values['optimizer'] = OptimizerConfig(lr=request.finetune_lr, schedule='cosine', warmup_steps=10)
        result = finetune(FinetuneConfig(**values))
        console.print(json.dumps({'accuracy': result.accuracy, 'majority_class': result.chance,
                                  'final_loss': result.losses[-1]}))
        return 0


COMMANDS: List[HarnessCommand] = [PretrainCommand(), AuditCommand(), AblateCommand(), BenchCommand(),
                                  GradcheckCommand(), VerifyCommand(), ReconstructCommand(), GenDataCommand(),
                                  FinetuneCommand()]
