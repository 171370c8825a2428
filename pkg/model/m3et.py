"""The multimodal masked autoencoder.

Every sample is processed on its own: its visible tokens are embedded per modality, run through the encoder stack
(Transformer layers interleaved with MambaBlocks, with a cross-attention fusion stage part-way), and read back by
three task decoders (RGB; depth with the semantic-segmentation head; text).
"""
import logging
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from losses import LossBreakdown, masked_cross_entropy, masked_l1, masked_mse, text_cross_entropy, total_loss
from masking import MaskPlan, mask_text_sentences, sample_mask_plan, select_task
from nn import CrossAttention, Embedding, LayerNorm, Linear, Module, Parameter, sincos_positions_2d, sincos_table
from nn.blocks import MambaBlock, TransformerLayer
from tensor import ConfigError, Rng, ShapeError, Tensor, concat, no_grad, stack

from .config import LayerKind, ModelConfig
from .data import ModalityBatch, patchify, unpatchify

logger = logging.getLogger(__name__)

# decoder that produces each task's prediction
DECODER_OF: Dict[str, str] = {'rgb': 'rgb', 'depth': 'depth', 'semseg': 'depth', 'text': 'text'}


def build_layer(kind: LayerKind, d: int, heads: int, d_inner: int, cfg: ModelConfig, rng: Rng) -> Module:
    if kind is LayerKind.MAMBA:
        return MambaBlock(d, d_inner, rng, dropout=cfg.dropout, inner_ssm=cfg.mamba.inner_ssm,
                          ssm_state=cfg.mamba.ssm_state)
    return TransformerLayer(d, heads, rng, mlp_ratio=cfg.mlp_ratio, dropout=cfg.dropout)


def adaptive_pool_matrix(out_count: int, in_count: int) -> np.ndarray:
    """[out x in] averaging matrix; row i averages inputs floor(i*in/out) .. ceil((i+1)*in/out) - 1."""
    matrix = np.zeros((out_count, in_count))
    for i in range(out_count):
        start = (i * in_count) // out_count
        end = -((-(i + 1) * in_count) // out_count)
        matrix[i, start:end] = 1.0 / (end - start)
    return matrix


class SemsegAdapter(Module):
    """Embeds every pixel's class id, then projects each patch's concatenated embeddings to the stream width."""

    def __init__(self, classes: int, embed: int, patch: int, d: int, rng: Rng):
        self.embedding = Embedding(classes, embed, rng.split('embedding'))
        self.proj = Linear(patch * patch * embed, d, rng.split('proj'))

    def forward(self, ids: np.ndarray) -> Tensor:
        return self.proj(self.embedding(ids).reshape(ids.shape[0], -1))


class ModalityEmbeddings(Module):
    """One learned ``d_modality`` vector per modality, lifted to the stream width by a shared Linear."""

    def __init__(self, modalities: List[str], d_modality: int, d: int, rng: Rng):
        self.table = {m: Parameter(rng.split(m).truncated_normal((d_modality,))) for m in modalities}
        self.lift = Linear(d_modality, d, rng.split('lift'))

    def forward(self) -> Dict[str, Tensor]:
        names = list(self.table)
        lifted = self.lift(stack([self.table[m] for m in names]))
        return {m: lifted[i] for i, m in enumerate(names)}


class FusionStage(Module):
    """Cross-attention over the (query, key, value) token groups, lifted back to the stream width.

    Value tokens are average-pooled to the key count when the two groups differ in length.
    """

    def __init__(self, d: int, d_fusion: int, rng: Rng):
        self.attention = CrossAttention(d, d_fusion, rng.split('attention'))
        self.lift = Linear(d_fusion, d, rng.split('lift'))

    def forward(self, queries: Tensor, keys: Tensor, values: Tensor) -> Tensor:
        if values.shape[0] != keys.shape[0]:
            values = Tensor(adaptive_pool_matrix(keys.shape[0], values.shape[0])) @ values
        return self.lift(self.attention(queries, keys, values))


class TaskDecoder(Module):
    """Projects the latents to the decoder width and rebuilds a full query grid for one target.

    Visible tokens of the source modality return to their positions; every other position holds the learned mask
    token. Fixed positions are added, the shared cross-attention (if any) reads the projected latents, and the
    decoder layers refine the grid.
    """

    def __init__(self, cfg: ModelConfig, positions: np.ndarray, rng: Rng):
        dec = cfg.decoder
        self.proj_in = Linear(cfg.d_encoder, dec.d_model, rng.split('proj_in'))
        self.mask_token = Parameter(rng.split('mask_token').truncated_normal((dec.d_model,)))
        self.layers = [build_layer(kind, dec.d_model, dec.heads, dec.d_inner, cfg, rng.split(i))
                       for i, kind in enumerate(cfg.decoder_layout())]
        self.norm = LayerNorm(dec.d_model)
        self.positions = positions

    def forward(self, latents: Tensor, rows: Tuple[int, int], visible: np.ndarray,
                attention: Optional[CrossAttention] = None) -> Tensor:
        context = self.proj_in(latents)
        count, width = self.positions.shape
        grid = Tensor(self.positions)
        hidden = np.ones(count, dtype=bool)
        hidden[visible] = False
        if hidden.any():
            fill = np.repeat(hidden[:, None], width, axis=1).astype(np.float64)
            grid = grid + self.mask_token.reshape(1, width).broadcast_to((count, width)) * Tensor(fill)
        if len(visible):
            scatter = np.zeros((count, len(visible)))
            scatter[visible, np.arange(len(visible))] = 1.0
            grid = grid + Tensor(scatter) @ context[rows[0]:rows[1]]
        if attention is not None:
            grid = grid + attention(grid, context, context)
        for layer in self.layers:
            grid = layer(grid)
        return self.norm(grid)


class Encoded(BaseModel):
    """Encoder output of one sample: latents plus the row range and visible indices of each modality."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    latents: Tensor
    groups: Dict[str, Tuple[int, int]]
    visible: Dict[str, np.ndarray]


class Prediction(BaseModel):
    """Reconstructions of one sample; visual maps are full images, text is greedy argmax ids."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    rgb: Optional[np.ndarray] = None
    depth: Optional[np.ndarray] = None
    semseg: Optional[np.ndarray] = None
    text: Optional[np.ndarray] = None


class M3ET(Module):
    def __init__(self, cfg: ModelConfig, rng: Rng):
        self.cfg = cfg
        d, p = cfg.d_encoder, cfg.patch
        adapters = rng.split('adapter')
        self.adapter: Dict[str, Module] = {}
        if 'rgb' in cfg.visual_modalities:
            self.adapter['rgb'] = Linear(p * p * 3, d, adapters.split('rgb'))
        if 'depth' in cfg.visual_modalities:
            self.adapter['depth'] = Linear(p * p, d, adapters.split('depth'))
        if 'semseg' in cfg.visual_modalities:
            self.adapter['semseg'] = SemsegAdapter(cfg.semseg_classes, cfg.semseg_embed, p, d,
                                                   adapters.split('semseg'))
        if cfg.text_active:
            self.adapter['text'] = Embedding(cfg.vocab, d, adapters.split('text'))
        self.modality = ModalityEmbeddings(cfg.input_modalities, cfg.d_modality, d, rng.split('modality'))

        encoder = rng.split('encoder')
        self.encoder = [build_layer(kind, d, cfg.encoder_heads, cfg.mamba.d_inner, cfg, encoder.split(i))
                        for i, kind in enumerate(cfg.layer_kinds())]
        self.fusion: Optional[FusionStage] = None
        if cfg.fusion_enabled():
            self.fusion = FusionStage(d, cfg.d_fusion, rng.split('fusion'))
        self.encoder_norm = LayerNorm(d)

        d_dec = cfg.decoder.d_model
        self.decoder_attention: Optional[CrossAttention] = None
        if cfg.use_cross_attention:
            self.decoder_attention = CrossAttention(d_dec, d_dec, rng.split('decoder_attention'))
        decoders = rng.split('decoder')
        self.decoder: Dict[str, TaskDecoder] = {}
        for name in cfg.decoder_sources():
            positions = sincos_table(cfg.text_len, d_dec) if name == 'text' else self._grid_table(d_dec)
            self.decoder[name] = TaskDecoder(cfg, positions, decoders.split(name))

        heads = rng.split('head')
        self.head: Dict[str, Linear] = {}
        tasks = cfg.tasks()
        if 'rgb' in tasks:
            self.head['rgb'] = Linear(d_dec, p * p * 3, heads.split('rgb'))
        if 'depth' in tasks:
            self.head['depth'] = Linear(d_dec, p * p, heads.split('depth'))
        if 'semseg' in tasks:
            self.head['semseg'] = Linear(d_dec, p * p * cfg.semseg_classes, heads.split('semseg'))
        if 'text' in tasks:
            self.head['text'] = Linear(d_dec, cfg.vocab, heads.split('text'))

        self._encoder_grid = self._grid_table(d)
        self._encoder_text = sincos_table(cfg.text_len, d) if cfg.text_active else None

    def _grid_table(self, d: int) -> np.ndarray:
        return sincos_positions_2d(self.cfg.grid, self.cfg.grid, d).numpy()

    # Encoder

    def _input_tokens(self, batch: ModalityBatch, index: int, modality: str, visible: np.ndarray) -> Tensor:
        p = self.cfg.patch
        match modality:
            case 'rgb':
                return self.adapter['rgb'](Tensor(patchify(batch.rgb[index], p)[visible]))
            case 'depth':
                return self.adapter['depth'](Tensor(patchify(batch.depth[index], p)[visible]))
            case 'semseg':
                return self.adapter['semseg'](patchify(batch.semseg[index], p)[visible])
            case 'text':
                return self.adapter['text'](batch.text[index][visible])
            case _:
                raise ConfigError(f"unknown modality '{modality}'")

    def encode_sample(self, batch: ModalityBatch, index: int, plan: MaskPlan) -> Encoded:
        cfg = self.cfg
        embeddings = self.modality()
        parts: List[Tensor] = []
        groups: Dict[str, Tuple[int, int]] = {}
        visible: Dict[str, np.ndarray] = {}
        offset = 0
        for modality in cfg.input_modalities:
            if modality == 'text':
                indices = plan.visible_indices('text') if plan.text_visible is not None else np.zeros(0, np.int64)
                positions = self._encoder_text
            else:
                if modality not in plan.visible or len(plan.visible[modality]) != cfg.tokens_per_modality:
                    raise ShapeError(f"mask plan does not cover the {cfg.tokens_per_modality} '{modality}' tokens")
                indices = plan.visible_indices(modality)
                positions = self._encoder_grid
            visible[modality] = indices
            if not len(indices):
                continue
            count = len(indices)
            tokens = self._input_tokens(batch, index, modality, indices)
            tokens = tokens + Tensor(positions[indices]) \
                + embeddings[modality].reshape(1, cfg.d_encoder).broadcast_to((count, cfg.d_encoder))
            parts.append(tokens)
            groups[modality] = (offset, offset + count)
            offset += count
        if not parts:
            raise ShapeError('the mask plan leaves no visible token')

        x = concat(parts)
        for i, layer in enumerate(self.encoder):
            x = layer(x)
            if self.fusion is not None and i + 1 == cfg.fusion_after:
                x = self._fuse(x, groups)
        return Encoded(latents=self.encoder_norm(x), groups=groups, visible=visible)

    def _fuse(self, x: Tensor, groups: Dict[str, Tuple[int, int]]) -> Tensor:
        query, key, value = self.cfg.fusion_qkv
        if query not in groups or key not in groups:
            return x
        rows = {name: x[start:end] for name, (start, end) in groups.items()}
        values = rows.get(value, rows[key])
        update = self.fusion(rows[query], rows[key], values)
        start, end = groups[query]
        pieces = [x[:start]] if start else []
        pieces.append(rows[query] + update)
        if end < x.shape[0]:
            pieces.append(x[end:])
        return concat(pieces)

    def encode(self, batch: ModalityBatch, plans: List[MaskPlan]) -> List[Encoded]:
        return [self.encode_sample(batch, i, plan) for i, plan in enumerate(plans)]

    # Decoders

    def decode(self, encoded: Encoded, name: str) -> Dict[str, Tensor]:
        """Runs one decoder and its heads; returns predictions keyed by task."""
        if name not in self.decoder:
            raise ConfigError(f"no decoder '{name}' (available: {sorted(self.decoder)})")
        source = self.cfg.decoder_sources()[name]
        rows = encoded.groups.get(source, (0, 0))
        hidden = self.decoder[name](encoded.latents, rows, encoded.visible[source], self.decoder_attention)
        p = self.cfg.patch
        outputs: Dict[str, Tensor] = {}
        for task in [t for t, decoder in DECODER_OF.items() if decoder == name and t in self.head]:
            out = self.head[task](hidden)
            if task == 'semseg':
                out = out.reshape(hidden.shape[0] * p * p, self.cfg.semseg_classes)
            outputs[task] = out
        return outputs

    # Training

    def sample_losses(self, batch: ModalityBatch, index: int, plan: MaskPlan, tasks: List[str]) -> Dict[str, Tensor]:
        cfg, p = self.cfg, self.cfg.patch
        encoded = self.encode_sample(batch, index, plan)
        outputs: Dict[str, Tensor] = {}
        for name in dict.fromkeys(DECODER_OF[task] for task in tasks):
            outputs.update(self.decode(encoded, name))
        norm = cfg.loss_normalization
        losses: Dict[str, Tensor] = {}
        for task in tasks:
            match task:
                case 'rgb':
                    losses[task] = masked_mse(outputs['rgb'], patchify(batch.rgb[index], p), plan.masked('rgb'), norm)
                case 'depth':
                    losses[task] = masked_l1(outputs['depth'], patchify(batch.depth[index], p),
                                             plan.masked('depth'), norm)
                case 'semseg':
                    losses[task] = masked_cross_entropy(outputs['semseg'],
                                                        patchify(batch.semseg[index], p).reshape(-1),
                                                        np.repeat(plan.masked('semseg'), p * p), norm)
                case 'text':
                    losses[task] = text_cross_entropy(outputs['text'], batch.text[index], cfg.pad_id)
        return losses

    def forward_train(self, batch: ModalityBatch, plans: List[MaskPlan],
                      rng: Optional[Rng] = None) -> Tuple[Tensor, LossBreakdown]:
        """Mean per-sample component losses, combined with the configured weights."""
        batch.check(self.cfg)
        if len(plans) != batch.size:
            raise ShapeError(f'{len(plans)} mask plan(s) for a batch of {batch.size}')
        tasks = self.cfg.trained_tasks()
        if not tasks:
            raise ConfigError('no task has a positive loss weight')
        if self.cfg.task_sampling:
            if rng is None:
                raise ConfigError('task sampling needs a random stream')
            tasks = [select_task(tasks, rng.split('task'))]

        sums: Dict[str, Tensor] = {}
        for i, plan in enumerate(plans):
            for task, loss in self.sample_losses(batch, i, plan, tasks).items():
                sums[task] = loss if task not in sums else sums[task] + loss
        components = {task: total * (1.0 / batch.size) for task, total in sums.items()}
        return total_loss(components, self.cfg.loss_weights)

    def forward(self, batch: ModalityBatch, plans: List[MaskPlan], rng: Optional[Rng] = None):
        return self.forward_train(batch, plans, rng)

    # Inference

    def predict(self, batch: ModalityBatch, index: int, plan: MaskPlan) -> Prediction:
        """Reconstructs one sample in evaluation mode; visible RGB patches are pasted back from the input."""
        cfg, p, size = self.cfg, self.cfg.patch, self.cfg.image_size
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                encoded = self.encode_sample(batch, index, plan)
                outputs: Dict[str, Tensor] = {}
                for name in self.decoder:
                    outputs.update(self.decode(encoded, name))
        finally:
            self.train(was_training)

        prediction = Prediction()
        if 'rgb' in outputs:
            patches = np.clip(outputs['rgb'].numpy(), 0.0, 1.0)
            visible = plan.visible_indices('rgb')
            patches[visible] = patchify(batch.rgb[index], p)[visible]
            prediction.rgb = unpatchify(patches, p, size, size, 3)
        if 'depth' in outputs:
            prediction.depth = unpatchify(outputs['depth'].numpy(), p, size, size, 1)
        if 'semseg' in outputs:
            labels = outputs['semseg'].numpy().argmax(axis=-1).reshape(cfg.tokens_per_modality, p * p)
            prediction.semseg = unpatchify(labels, p, size, size)
        if 'text' in outputs:
            prediction.text = outputs['text'].numpy().argmax(axis=-1)
        return prediction


def draw_plans(cfg: ModelConfig, batch: ModalityBatch, rng: Rng) -> List[MaskPlan]:
    """One mask plan per sample, each from its own split stream."""
    counts = {m: cfg.tokens_per_modality for m in cfg.visual_modalities}
    plans = []
    for i in range(batch.size):
        stream = rng.split(i)
        text_visible = None
        if cfg.text_active:
            if cfg.mask_text_in_encoder:
                text_visible = mask_text_sentences(batch.spans(i, cfg.pad_id), cfg.sentence_mask_p,
                                                   stream.split('text'))
            else:
                text_visible = batch.text[i] != cfg.pad_id
        plans.append(sample_mask_plan(counts, cfg.mask_budget, cfg.dirichlet_alpha, stream.split('visual'),
                                      text_visible))
    return plans
