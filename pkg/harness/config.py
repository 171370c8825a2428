"""Run configuration: a model configuration plus optimization, data and output settings."""
from pathlib import Path
from typing import Literal, Optional, Tuple

from pydantic import BaseModel, Field, model_validator

from model import ModelConfig
from tensor import ConfigError
from util import env_var

Precision = Literal['float32', 'float64']


class OptimizerConfig(BaseModel):
    lr: float = Field(default=1e-4, gt=0.0, description='Peak learning rate')
    weight_decay: float = Field(default=0.05, ge=0.0, description='Decoupled weight decay')
    betas: Tuple[float, float] = Field(default=(0.9, 0.999), description='AdamW moment decay rates')
    eps: float = Field(default=1e-8, gt=0.0, description='AdamW denominator epsilon')
    schedule: Literal['constant', 'cosine'] = Field(default='constant', description='Learning-rate schedule')
    warmup_steps: int = Field(default=0, ge=0, description='Linear warmup steps of the cosine schedule')
    min_lr: float = Field(default=0.0, ge=0.0, description='Floor of the cosine schedule')

    @model_validator(mode='after')
    def _betas_in_range(self) -> 'OptimizerConfig':
        if not all(0.0 <= beta < 1.0 for beta in self.betas):
            raise ConfigError(f'AdamW betas must lie in [0, 1), got {self.betas}')
        return self


class RunConfig(BaseModel):
    model: ModelConfig = Field(default_factory=ModelConfig.paper)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    batch_size: int = Field(default=16, gt=0, description='Scenes per training step')
    iterations: int = Field(default=1600, gt=0, description='Training steps')
    seed: int = Field(default=0, ge=0, description='Seed of every random stream of the run')
    output_dir: str = Field(default_factory=lambda: env_var('M3ET_OUTPUT_DIR', 'runs/m3et'),
                            description='Directory receiving metrics, timings and checkpoints')
    precision: Precision = Field(default_factory=lambda: env_var('M3ET_PRECISION', 'float32'), validate_default=True,
                                 description='Floating-point precision of parameters and activations')
    finite_audit: bool = Field(default=False, description='Check every operation output for NaN/Inf')
    train_scenes: int = Field(default=256, gt=0, description='Synthetic training scenes')
    eval_scenes: int = Field(default=4, gt=0, description='Held-out scenes used for evaluation')
    eval_every: int = Field(default=100, gt=0, description='Steps between held-out evaluations')
    checkpoint_every: int = Field(default=100, gt=0, description='Steps between checkpoints')
    prefetch: int = Field(default=2, ge=0, description='Batches prepared ahead on a worker thread (0: inline)')
    data_dir: Optional[str] = Field(default=None, description='Read training scenes from this gen-data directory')

    @model_validator(mode='after')
    def _batch_fits(self) -> 'RunConfig':
        if self.data_dir is None and self.batch_size > self.train_scenes:
            raise ConfigError(f'batch size {self.batch_size} exceeds the {self.train_scenes} training scenes')
        return self

    @property
    def output_path(self) -> Path:
        return Path(self.output_dir)

    @classmethod
    def paper(cls, **overrides) -> 'RunConfig':
        """224 pixel scenes, batch 16, 1600 iterations at learning rate 1e-4."""
        return cls(**overrides)

    @classmethod
    def desk(cls, **overrides) -> 'RunConfig':
        """64 pixel scenes, batch 8, 300 iterations, warmup then cosine decay from a tenfold peak learning rate."""
        values = dict(model=ModelConfig.desk(),
                      optimizer=OptimizerConfig(lr=1e-3, schedule='cosine', warmup_steps=20, min_lr=1e-5),
                      batch_size=8, iterations=300, eval_scenes=8)
        values.update(overrides)
        return cls(**values)


class FinetuneConfig(BaseModel):
    run: RunConfig = Field(default_factory=RunConfig.desk)
    checkpoint: Optional[str] = Field(default=None, description='Pretrained checkpoint to start from')
    steps: int = Field(default=100, gt=0, description='Fine-tuning steps')
    optimizer: OptimizerConfig = Field(default_factory=lambda: OptimizerConfig(lr=5e-5, schedule='cosine',
                                                                               warmup_steps=10))
    batch_size: int = Field(default=8, gt=0, description='Caption pairs per step')
    eval_pairs: int = Field(default=32, gt=0, description='Held-out caption pairs scored at the end')
