"""Caption matching: a small downstream task on top of the pretrained encoder.

Each example pairs a scene with either its own caption or the caption of another scene. The encoder sees every
token, its latents are mean-pooled and a two-class head decides whether image and caption match.
"""
import logging
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel
from tqdm import tqdm

from losses import masked_cross_entropy
from masking import MaskPlan, full_plan
from model import M3ET, ModalityBatch, ModelConfig, tokenize_text
from nn import Linear, Module
from tensor import ConfigError, Rng, Tensor, no_grad, set_precision, stack

from .checkpoint import restore, load_checkpoint
from .config import FinetuneConfig
from .optim import AdamW
from .synthetic import SyntheticDataset, generate_synthetic

logger = logging.getLogger(__name__)


class CaptionMatcher(Module):
    def __init__(self, backbone: M3ET, rng: Rng):
        if not backbone.cfg.text_active:
            raise ConfigError('caption matching needs a model that reads text')
        self.backbone = backbone
        self.head = Linear(backbone.cfg.d_encoder, 2, rng.split('head'))

    def forward(self, batch: ModalityBatch) -> Tensor:
        """[B x 2] logits: column 1 scores 'caption matches the image'."""
        pooled = [self.backbone.encode_sample(batch, i, plan).latents.mean(axis=0)
                  for i, plan in enumerate(full_plans(self.backbone.cfg, batch))]
        return self.head(stack(pooled))


def full_plans(cfg: ModelConfig, batch: ModalityBatch) -> List[MaskPlan]:
    counts = {m: cfg.tokens_per_modality for m in cfg.visual_modalities}
    return [full_plan(counts, text_visible=batch.text[i] != cfg.pad_id) for i in range(batch.size)]


def caption_pairs(dataset: SyntheticDataset, cfg: ModelConfig, rng: Rng, count: int) -> Tuple[ModalityBatch,
                                                                                               np.ndarray]:
    """``count`` scenes, each paired with its own caption (label 1) or a different one (label 0) at even odds."""
    scenes = rng.split('scenes').integers(0, len(dataset), count)
    labels = rng.split('labels').bernoulli(0.5, count).astype(np.int64)
    others = rng.split('others')
    batch = dataset.batch(scenes, cfg)
    text = batch.text.copy()
    for row, (scene, label) in enumerate(zip(scenes, labels)):
        if label:
            continue
        own = dataset.scenes[scene].caption
        candidates = [i for i, s in enumerate(dataset.scenes) if s.caption != own]
        if not candidates:
            labels[row] = 1
            continue
        other = candidates[int(others.integers(0, len(candidates)))]
        text[row] = tokenize_text(dataset.scenes[other].caption, cfg.text_len, cfg.pad_id)[0]
    return batch.model_copy(update={'text': text}), labels


class FinetuneResult(BaseModel):
    losses: List[float]
    accuracy: float
    chance: float


def matching_accuracy(matcher: CaptionMatcher, batch: ModalityBatch, labels: np.ndarray) -> float:
    matcher.eval()
    with no_grad():
        predicted = matcher(batch).numpy().argmax(axis=-1)
    return float((predicted == labels).mean())


def finetune(config: FinetuneConfig, progress: bool = True) -> FinetuneResult:
    run = config.run
    set_precision(run.precision)
    cfg = run.model
    backbone = M3ET(cfg, Rng(run.seed).split('init'))
    if config.checkpoint is not None:
        restore(load_checkpoint(config.checkpoint), backbone)
        logger.info('fine-tuning from %s', config.checkpoint)
    else:
        logger.warning('no checkpoint given: fine-tuning a randomly initialized encoder')
    matcher = CaptionMatcher(backbone, Rng(run.seed).split('finetune'))

    train = generate_synthetic(run.seed, run.train_scenes, cfg, 'finetune')
    held_out = generate_synthetic(run.seed, max(2, config.eval_pairs), cfg, 'finetune-eval')
    optimizer = AdamW(list(matcher.named_parameters()), config.optimizer, config.steps)
    stream = Rng(run.seed).split('finetune-steps')

    losses = []
    for step in tqdm(range(1, config.steps + 1), desc='finetune', disable=not progress):
        matcher.train()
        matcher.reseed(stream.split(step).split('dropout'))
        batch, labels = caption_pairs(train, cfg, stream.split(step), config.batch_size)
        loss = masked_cross_entropy(matcher(batch), labels, np.ones(len(labels), dtype=bool))
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        losses.append(loss.item())

    eval_batch, eval_labels = caption_pairs(held_out, cfg, Rng(run.seed).split('finetune-eval'), config.eval_pairs)
    accuracy = matching_accuracy(matcher, eval_batch, eval_labels)
    chance = float(max(eval_labels.mean(), 1.0 - eval_labels.mean()))
    logger.info('caption matching accuracy %.3f (majority class %.3f)', accuracy, chance)
    return FinetuneResult(losses=losses, accuracy=accuracy, chance=chance)
