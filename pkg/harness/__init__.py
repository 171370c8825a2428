from .ablations import CONFIGS, PAPER_EFFICIENCY, PAPER_REFERENCE, AblationRow, AblationTable, run_ablations
from .bench import BenchReport, LatencyStats, bench
from .checkpoint import (Checkpoint, CheckpointError, decode_checkpoint, encode_checkpoint, load_checkpoint, restore,
                         save_checkpoint, snapshot)
from .config import FinetuneConfig, OptimizerConfig, RunConfig
from .dataset_io import DatasetError, load_dataset, save_dataset
from .finetune import CaptionMatcher, finetune
from .metrics import PSNR_CAP_DB, depth_rmse, mean_iou, psnr, token_accuracy
from .metrics_log import EvalRecord, MetricsLog, StepRecord, read_metrics
from .optim import AdamW, AdamWState, adamw_step, constant_schedule, make_schedule, warmup_cosine_schedule
from .prefetch import Prefetcher
from .synthetic import Scene, SceneObject, SyntheticDataset, caption_for, generate_synthetic
from .train import evaluate, load_model, pretrain
from .verify import gradient_suite, masking_statistics_suite, ssm_equivalence_suite
