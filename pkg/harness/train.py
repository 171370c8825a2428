"""Masked multimodal pretraining on synthetic scenes.

Every random draw of step ``s`` comes from streams split off ``Rng(seed)`` by ``s``: batch choice, mask plans,
dropout and task selection. A run resumed from the checkpoint at step ``s`` therefore repeats an unbroken run.
"""
import logging
import time
from functools import partial
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict
from tqdm import tqdm

from masking import MaskPlan
from model import M3ET, ModalityBatch, ModelConfig, draw_plans, patchify, unpatchify
from tensor import ConfigError, NonFiniteError, Rng, set_finite_audit, set_precision

from .checkpoint import CheckpointError, load_checkpoint, restore, save_checkpoint, snapshot
from .config import RunConfig
from .dataset_io import load_dataset
from .metrics import depth_rmse, mean_iou, psnr, token_accuracy
from .metrics_log import EvalRecord, MetricsLog, StepRecord
from .optim import AdamW
from .prefetch import Prefetcher
from .synthetic import SyntheticDataset, generate_synthetic

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = 'checkpoint.m3et'


class PreparedStep(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    step: int
    batch: ModalityBatch
    plans: List[MaskPlan]


class TrainResult(BaseModel):
    steps: List[StepRecord]
    evals: List[EvalRecord]
    checkpoint: Path


def load_training_data(run: RunConfig) -> Tuple[SyntheticDataset, SyntheticDataset]:
    """Training scenes (generated, or read from ``data_dir``) and the held-out evaluation scenes."""
    cfg = run.model
    if run.data_dir is not None:
        train = load_dataset(run.data_dir)
        if len(train) < run.batch_size:
            raise ConfigError(f'batch size {run.batch_size} exceeds the {len(train)} scenes in {run.data_dir}')
    else:
        train = generate_synthetic(run.seed, run.train_scenes, cfg, 'train')
    held_out = generate_synthetic(run.seed, run.eval_scenes, cfg, 'eval')
    return train, held_out


def prepare_step(run: RunConfig, dataset: SyntheticDataset, step: int) -> PreparedStep:
    stream = Rng(run.seed).split('step').split(step)
    indices = stream.split('batch').choice(len(dataset), run.batch_size)
    batch = dataset.batch(indices, run.model)
    return PreparedStep(step=step, batch=batch, plans=draw_plans(run.model, batch, stream.split('mask')))


def evaluation_plans(cfg: ModelConfig, batch: ModalityBatch, seed: int) -> List[MaskPlan]:
    """Fixed held-out masks, so successive evaluations score the same problem."""
    return draw_plans(cfg, batch, Rng(seed).split('eval'))


def evaluate(model: M3ET, dataset: SyntheticDataset, seed: int, step: int) -> EvalRecord:
    """Mean reconstruction quality on the held-out scenes: composite RGB PSNR, plus depth RMSE, semseg mIoU and
    token accuracy where the model predicts them."""
    cfg = model.cfg
    batch = dataset.batch(range(len(dataset)), cfg)
    plans = evaluation_plans(cfg, batch, seed)
    scores = {'psnr': [], 'depth_rmse': [], 'miou': [], 'token_accuracy': []}
    for i, plan in enumerate(plans):
        prediction = model.predict(batch, i, plan)
        if prediction.rgb is not None:
            scores['psnr'].append(psnr(prediction.rgb, batch.rgb[i]))
        if prediction.depth is not None:
            scores['depth_rmse'].append(depth_rmse(prediction.depth, batch.depth[i]))
        if prediction.semseg is not None:
            scores['miou'].append(mean_iou(prediction.semseg, batch.semseg[i], cfg.semseg_classes))
        if prediction.text is not None:
            scores['token_accuracy'].append(token_accuracy(prediction.text, batch.text[i], cfg.pad_id))
    means = {name: float(np.mean(values)) if values else None for name, values in scores.items()}
    return EvalRecord(step=step, psnr=means['psnr'] if means['psnr'] is not None else 0.0,
                      depth_rmse=means['depth_rmse'], miou=means['miou'], token_accuracy=means['token_accuracy'])


def _header(run: RunConfig, step: int) -> dict:
    return {'step': step, 'precision': run.precision, 'config': run.model_dump(mode='json')}


def _resume(run: RunConfig, path: Path, model: M3ET, optimizer: AdamW) -> int:
    checkpoint = load_checkpoint(path)
    saved = checkpoint.header.get('config', {}).get('model')
    if saved is None or ModelConfig.model_validate(saved) != run.model:
        raise CheckpointError(f'{path} was written for a different model configuration')
    if checkpoint.header.get('precision') != run.precision:
        raise CheckpointError(f"{path} holds {checkpoint.header.get('precision')} parameters, the run uses "
                              f'{run.precision}')
    restore(checkpoint, model, optimizer)
    logger.info('resumed from %s at step %d', path, checkpoint.step)
    return checkpoint.step


def pretrain(run: RunConfig, resume: bool = False, progress: bool = True) -> TrainResult:
    set_precision(run.precision)
    set_finite_audit(run.finite_audit)
    cfg = run.model
    train_data, held_out = load_training_data(run)

    model = M3ET(cfg, Rng(run.seed).split('init'))
    optimizer = AdamW(list(model.named_parameters()), run.optimizer, run.iterations)
    log = MetricsLog(run.output_path)
    checkpoint_path = run.output_path / CHECKPOINT_NAME
    logger.info('pretraining %s parameters for %d step(s), batch %d, lr %g', f'{model.num_parameters():,}',
                run.iterations, run.batch_size, run.optimizer.lr)

    start = 0
    if resume and checkpoint_path.exists():
        start = _resume(run, checkpoint_path, model, optimizer)
        log.resume(start)
    else:
        log.reset()

    model.train()
    steps = Prefetcher(partial(prepare_step, run, train_data), start + 1, run.iterations + 1, run.prefetch)
    for prepared in tqdm(steps, initial=start, total=run.iterations, desc='pretrain', disable=not progress):
        step = prepared.step
        started = time.perf_counter()
        model.reseed(Rng(run.seed).split('dropout').split(step))
        loss, breakdown = model.forward_train(prepared.batch, prepared.plans,
                                              rng=Rng(run.seed).split('task').split(step))
        if not loss.is_finite():
            raise NonFiniteError(f'loss became {breakdown.total} at step {step}; the last good checkpoint is '
                                 f'{checkpoint_path}')
        optimizer.zero_grad()
        loss.backward()
        lr = optimizer.step()
        log.append(StepRecord(step=step, total=breakdown.total, components=breakdown.components, lr=lr))
        log.time(step, 1000.0 * (time.perf_counter() - started))

        if step % run.eval_every == 0 or step == run.iterations:
            record = evaluate(model, held_out, run.seed, step)
            log.append(record)
            logger.info('step %d: loss %.4f, held-out PSNR %.2f dB', step, breakdown.total, record.psnr)
        if step % run.checkpoint_every == 0 or step == run.iterations:
            save_checkpoint(snapshot(model, optimizer, _header(run, step)), checkpoint_path)

    return TrainResult(steps=log.steps(), evals=log.evals(), checkpoint=checkpoint_path)


def reconstruction_images(model: M3ET, batch: ModalityBatch, index: int, plan: MaskPlan) -> dict:
    """Prediction maps of one scene plus the masked input RGB (hidden patches zeroed) for side-by-side viewing."""
    cfg = model.cfg
    prediction = model.predict(batch, index, plan)
    images = {name: value for name, value in prediction.model_dump().items() if value is not None}
    if batch.rgb is not None:
        patches = patchify(batch.rgb[index], cfg.patch)
        patches[plan.masked('rgb')] = 0.0
        images['masked_rgb'] = unpatchify(patches, cfg.patch, cfg.image_size, cfg.image_size, 3)
    return images


def load_model(path: Path, precision: Optional[str] = None) -> Tuple[M3ET, RunConfig, int]:
    """Rebuilds the model stored in a pretraining checkpoint."""
    checkpoint = load_checkpoint(path)
    if 'config' not in checkpoint.header:
        raise CheckpointError(f'{path} has no configuration snapshot')
    run = RunConfig.model_validate(checkpoint.header['config'])
    set_precision(precision or checkpoint.header.get('precision', run.precision))
    model = M3ET(run.model, Rng(run.seed).split('init'))
    restore(checkpoint, model)
    return model, run, checkpoint.step
