"""Exact parameter counts and conventional FLOPs for every block of a configuration or built model."""
import logging
from typing import Dict, List, Optional, Union

import numpy as np
from pydantic import BaseModel, Field

from masking import allocate_budget
from model import M3ET, LayerKind, ModelConfig
from nn import Module
from tensor import PRECISIONS

from .report import AuditError, AuditReport, BlockRecord

logger = logging.getLogger(__name__)

GROUPED_PREFIXES = ('adapter', 'encoder', 'decoder', 'head')
ELEMENTWISE_FLOPS = 5


# Parameter counts

def linear_params(n_in: int, n_out: int, bias: bool = True) -> int:
    return n_in * n_out + (n_out if bias else 0)


def layer_norm_params(d: int) -> int:
    return 2 * d


def transformer_layer_params(d: int, mlp_ratio: int = 4) -> int:
    hidden = mlp_ratio * d
    return 2 * layer_norm_params(d) + 4 * linear_params(d, d) + linear_params(d, hidden) + linear_params(hidden, d)


def selective_ssm_params(d_in: int, state: int) -> int:
    return 2 * linear_params(d_in, state) + linear_params(d_in, 1) + 1 + d_in * state


def mamba_block_params(d: int, d_inner: int, inner_ssm: bool = False, state: int = 4) -> int:
    extra = selective_ssm_params(d_inner, state) if inner_ssm else 0
    return layer_norm_params(d) + linear_params(d, d_inner) + linear_params(d_inner, d) + extra


def cross_attention_params(d_in: int, d_attn: int) -> int:
    return 3 * linear_params(d_in, d_attn)


# FLOPs under the documented convention

def linear_flops(tokens: int, n_in: int, n_out: int) -> int:
    return 2 * tokens * n_in * n_out


def elementwise_flops(tokens: int, d: int) -> int:
    return ELEMENTWISE_FLOPS * tokens * d


def self_attention_flops(tokens: int, d: int, heads: int) -> int:
    return 4 * linear_flops(tokens, d, d) + 4 * tokens * tokens * d + ELEMENTWISE_FLOPS * heads * tokens * tokens


def transformer_layer_flops(tokens: int, d: int, heads: int, mlp_ratio: int = 4) -> int:
    hidden = mlp_ratio * d
    return (2 * elementwise_flops(tokens, d) + self_attention_flops(tokens, d, heads)
            + linear_flops(tokens, d, hidden) + elementwise_flops(tokens, hidden) + linear_flops(tokens, hidden, d))


def selective_ssm_flops(tokens: int, d_in: int, state: int) -> int:
    # per step and state element: exp, input scale, multiply-add into the state, readout
    return (2 * linear_flops(tokens, d_in, state) + linear_flops(tokens, d_in, 1) + elementwise_flops(tokens, 1)
            + 10 * tokens * d_in * state)


def mamba_block_flops(tokens: int, d: int, d_inner: int, inner_ssm: bool = False, state: int = 4) -> int:
    extra = selective_ssm_flops(tokens, d_inner, state) if inner_ssm else 0
    return (elementwise_flops(tokens, d) + linear_flops(tokens, d, d_inner) + elementwise_flops(tokens, d_inner)
            + linear_flops(tokens, d_inner, d) + extra)


def cross_attention_flops(queries: int, keys: int, d_in: int, d_attn: int) -> int:
    return (linear_flops(queries, d_in, d_attn) + 2 * linear_flops(keys, d_in, d_attn)
            + 4 * queries * keys * d_attn + ELEMENTWISE_FLOPS * queries * keys)


# Live activation elements of one block's forward

def transformer_layer_activations(tokens: int, d: int, heads: int, mlp_ratio: int = 4) -> int:
    return tokens * d * (6 + 2 * mlp_ratio) + 2 * heads * tokens * tokens


def mamba_block_activations(tokens: int, d: int, d_inner: int) -> int:
    return 2 * tokens * d + 2 * tokens * d_inner


def cross_attention_activations(queries: int, keys: int, d_attn: int) -> int:
    return 2 * queries * d_attn + 2 * keys * d_attn + 2 * queries * keys


class AuditGeometry(BaseModel):
    """Token counts of one forward pass: visible encoder tokens per visual modality, encoder text tokens and the
    query count of every decoder."""
    visible: Dict[str, int] = Field(description='Visible tokens per visual modality entering the encoder')
    text_tokens: int = Field(default=0, ge=0, description='Text tokens entering the encoder')
    decoder_queries: Dict[str, int] = Field(description='Query grid size per decoder')

    @property
    def encoder_tokens(self) -> int:
        return sum(self.visible.values()) + self.text_tokens

    @classmethod
    def from_config(cls, cfg: ModelConfig) -> 'AuditGeometry':
        """The budget split evenly over the visual modalities (largest remainders) and the whole caption."""
        names = cfg.visual_modalities
        counts = allocate_budget(np.full(len(names), 1.0 / len(names)), cfg.mask_budget,
                                 [cfg.tokens_per_modality] * len(names))
        queries = {name: (cfg.text_len if name == 'text' else cfg.tokens_per_modality)
                   for name in cfg.decoder_sources()}
        return cls(visible=dict(zip(names, counts.tolist())), text_tokens=cfg.text_len if cfg.text_active else 0,
                   decoder_queries=queries)


def _check_geometry(cfg: ModelConfig, geometry: AuditGeometry):
    missing = [m for m in cfg.visual_modalities if m not in geometry.visible]
    missing += [f'decoder {name}' for name in cfg.decoder_sources() if name not in geometry.decoder_queries]
    if missing:
        raise AuditError(f'geometry is incomplete, missing: {missing}')
    if geometry.encoder_tokens <= 0:
        raise AuditError('geometry has no encoder token')


def _layer_record(name: str, kind: LayerKind, tokens: int, d: int, heads: int, d_inner: int,
                  cfg: ModelConfig) -> BlockRecord:
    if kind is LayerKind.MAMBA:
        inner, state = cfg.mamba.inner_ssm, cfg.mamba.ssm_state
        return BlockRecord(name=name, kind='mamba', params=mamba_block_params(d, d_inner, inner, state),
                           flops=mamba_block_flops(tokens, d, d_inner, inner, state),
                           activations=mamba_block_activations(tokens, d, d_inner))
    return BlockRecord(name=name, kind='transformer', params=transformer_layer_params(d, cfg.mlp_ratio),
                       flops=transformer_layer_flops(tokens, d, heads, cfg.mlp_ratio),
                       activations=transformer_layer_activations(tokens, d, heads, cfg.mlp_ratio))


def _config_blocks(cfg: ModelConfig, geometry: AuditGeometry) -> List[BlockRecord]:
    """Mirrors the block structure of :class:`model.M3ET` (same names, same order)."""
    _check_geometry(cfg, geometry)
    d, p, d_dec = cfg.d_encoder, cfg.patch, cfg.decoder.d_model
    tokens = geometry.encoder_tokens
    visible = geometry.visible
    blocks: List[BlockRecord] = []

    inputs = {'rgb': p * p * 3, 'depth': p * p, 'semseg': p * p * cfg.semseg_embed}
    for modality in cfg.visual_modalities:
        params = linear_params(inputs[modality], d)
        if modality == 'semseg':
            params += cfg.semseg_classes * cfg.semseg_embed
        blocks.append(BlockRecord(name=f'adapter.{modality}', kind='adapter', params=params,
                                  flops=linear_flops(visible[modality], inputs[modality], d),
                                  activations=visible[modality] * d))
    if cfg.text_active:
        blocks.append(BlockRecord(name='adapter.text', kind='adapter', params=cfg.vocab * d,
                                  activations=geometry.text_tokens * d))
    count = len(cfg.input_modalities)
    blocks.append(BlockRecord(name='modality', kind='embedding',
                              params=count * cfg.d_modality + linear_params(cfg.d_modality, d),
                              flops=linear_flops(count, cfg.d_modality, d), activations=count * d))

    for i, kind in enumerate(cfg.layer_kinds()):
        blocks.append(_layer_record(f'encoder.{i}', kind, tokens, d, cfg.encoder_heads, cfg.mamba.d_inner, cfg))

    if cfg.fusion_enabled():
        query, key, value = cfg.fusion_qkv
        n_q = visible.get(query, geometry.text_tokens if query == 'text' else 0)
        n_k = visible.get(key, geometry.text_tokens if key == 'text' else 0)
        n_v = visible.get(value, geometry.text_tokens if value == 'text' else 0)
        flops = cross_attention_flops(n_q, n_k, d, cfg.d_fusion) + linear_flops(n_q, cfg.d_fusion, d)
        if n_v and n_v != n_k:
            flops += 2 * n_k * n_v * d
        blocks.append(BlockRecord(name='fusion', kind='fusion',
                                  params=cross_attention_params(d, cfg.d_fusion) + linear_params(cfg.d_fusion, d),
                                  flops=flops, activations=cross_attention_activations(n_q, n_k, cfg.d_fusion)))
    blocks.append(BlockRecord(name='encoder_norm', kind='norm', params=layer_norm_params(d),
                              flops=elementwise_flops(tokens, d), activations=tokens * d))

    queries = geometry.decoder_queries
    if cfg.use_cross_attention:
        blocks.append(BlockRecord(name='decoder_attention', kind='cross_attention',
                                  params=cross_attention_params(d_dec, d_dec),
                                  flops=sum(cross_attention_flops(queries[n], tokens, d_dec, d_dec)
                                            for n in cfg.decoder_sources()),
                                  activations=max(cross_attention_activations(queries[n], tokens, d_dec)
                                                  for n in cfg.decoder_sources())))
    for name in cfg.decoder_sources():
        n = queries[name]
        layers = [_layer_record('', kind, n, d_dec, cfg.decoder.heads, cfg.decoder.d_inner, cfg)
                  for kind in cfg.decoder_layout()]
        blocks.append(BlockRecord(name=f'decoder.{name}', kind='decoder',
                                  params=(linear_params(d, d_dec) + d_dec + sum(r.params for r in layers)
                                          + layer_norm_params(d_dec)),
                                  flops=(linear_flops(tokens, d, d_dec) + sum(r.flops for r in layers)
                                         + elementwise_flops(n, d_dec)),
                                  activations=max([tokens * d_dec] + [r.activations for r in layers])))

    outputs = {'rgb': p * p * 3, 'depth': p * p, 'semseg': p * p * cfg.semseg_classes, 'text': cfg.vocab}
    for task in cfg.tasks():
        n = queries['text' if task == 'text' else ('rgb' if task == 'rgb' else 'depth')]
        blocks.append(BlockRecord(name=f'head.{task}', kind='head', params=linear_params(d_dec, outputs[task]),
                                  flops=linear_flops(n, d_dec, outputs[task]), activations=n * outputs[task]))
    return blocks


def block_of(parameter_name: str) -> str:
    """Block a parameter belongs to: ``encoder.3.attn.proj_q.weight`` -> ``encoder.3``."""
    parts = parameter_name.split('.')
    return '.'.join(parts[:2]) if parts[0] in GROUPED_PREFIXES else parts[0]


def _model_blocks(model: Module) -> List[BlockRecord]:
    kinds: Dict[str, str] = {}
    if isinstance(model, M3ET):
        for i, kind in enumerate(model.cfg.layer_kinds()):
            kinds[f'encoder.{i}'] = kind.value
    counts: Dict[str, int] = {}
    for name, parameter in model.named_parameters():
        block = block_of(name) if isinstance(model, M3ET) else type(model).__name__
        counts[block] = counts.get(block, 0) + parameter.size
    return [BlockRecord(name=name, kind=kinds.get(name, name.split('.')[0]), params=int(params))
            for name, params in counts.items()]


def count_params(source: Union[ModelConfig, Module], label: Optional[str] = None) -> AuditReport:
    """Exact parameter counts per block of a configuration or of a built module."""
    if isinstance(source, ModelConfig):
        blocks = [BlockRecord(name=r.name, kind=r.kind, params=r.params)
                  for r in _config_blocks(source, AuditGeometry.from_config(source))]
    else:
        blocks = _model_blocks(source)
    return AuditReport(label=label or 'params', blocks=blocks)


def estimate_flops(cfg: ModelConfig, geometry: Optional[AuditGeometry] = None,
                   label: Optional[str] = None) -> AuditReport:
    """Forward FLOPs (batch 1) per block under the documented convention, with parameter counts alongside."""
    geometry = geometry or AuditGeometry.from_config(cfg)
    report = AuditReport(label=label or 'flops', blocks=_config_blocks(cfg, geometry))
    logger.debug('%s: %d params, %.3e FLOPs', report.label, report.total_params, report.total_flops)
    return report


class MemoryEstimate(BaseModel):
    param_bytes: int
    activation_bytes: int
    training: bool

    @property
    def total_bytes(self) -> int:
        return self.param_bytes + self.activation_bytes


def estimate_memory(cfg: ModelConfig, geometry: Optional[AuditGeometry] = None, precision: str = 'float32',
                    training: bool = False) -> MemoryEstimate:
    """Parameter bytes plus activation bytes under a block-at-a-time schedule.

    Inference keeps one block's activations live at a time (the largest counts); training keeps every block's
    activations for the backward pass and stores gradients and two AdamW moments next to the parameters.
    """
    if precision not in PRECISIONS:
        raise AuditError(f"unknown precision '{precision}'")
    itemsize = np.dtype(PRECISIONS[precision]).itemsize
    report = estimate_flops(cfg, geometry)
    activations = [b.activations for b in report.blocks]
    live = sum(activations) if training else max(activations)
    return MemoryEstimate(param_bytes=report.total_params * itemsize * (4 if training else 1),
                          activation_bytes=live * itemsize, training=training)
