"""Model configuration and the shipped presets."""
from enum import Enum
from typing import Dict, List, Literal, Tuple

from pydantic import BaseModel, Field, model_validator

from losses import LossWeights, Normalization
from tensor import ConfigError

Modality = Literal['rgb', 'depth', 'semseg', 'text']
VISUAL_MODALITIES: Tuple[str, ...] = ('rgb', 'depth', 'semseg')
ALL_MODALITIES: Tuple[str, ...] = VISUAL_MODALITIES + ('text',)
ABLATIONS: Tuple[str, ...] = ('no_text', 'no_mamba', 'no_cross_attention')


class LayerKind(str, Enum):
    TRANSFORMER = 'transformer'
    MAMBA = 'mamba'


class MambaConfig(BaseModel):
    d_inner: int = Field(default=64, gt=0, description='Bottleneck width of the encoder MambaBlocks')
    inner_ssm: bool = Field(default=False, description='Run a selective SSM mixer inside every MambaBlock')
    ssm_state: int = Field(default=4, gt=0, description='State size N of the inner selective SSM')


class DecoderConfig(BaseModel):
    d_model: int = Field(default=256, gt=0, description='Width of every task decoder')
    heads: int = Field(default=8, gt=0, description='Attention heads of the decoder Transformer layers')
    d_inner: int = Field(default=64, gt=0, description='Bottleneck width of the decoder MambaBlock')
    compact: bool = Field(default=False, description='Three-layer decoders (Transformer, Mamba, Transformer) '
                                                     'instead of three Transformer layers, Mamba, two Transformer')

    def layout(self) -> List[LayerKind]:
        t, m = LayerKind.TRANSFORMER, LayerKind.MAMBA
        return [t, m, t] if self.compact else [t, t, t, m, t, t]


class ModelConfig(BaseModel):
    image_size: int = Field(default=64, gt=0, description='Side of the square input images in pixels')
    patch: int = Field(default=16, gt=0, description='Side of the non-overlapping square patches')
    d_encoder: int = Field(default=768, gt=0, description='Width of the encoder token stream')
    encoder_depth: int = Field(default=12, gt=0, description='Number of encoder layers')
    encoder_heads: int = Field(default=12, gt=0, description='Attention heads of the encoder Transformer layers')
    mlp_ratio: int = Field(default=4, gt=0, description='Hidden width of the Transformer MLP over the stream width')
    mamba_layer_indices: List[int] = Field(default=[1, 3, 5, 7, 9, 11],
                                           description='Encoder layers (0-based) that are MambaBlocks')
    mamba: MambaConfig = Field(default_factory=MambaConfig)
    decoder: DecoderConfig = Field(default_factory=DecoderConfig)
    d_modality: int = Field(default=256, gt=0, description='Width of the learned per-modality embeddings')
    d_fusion: int = Field(default=256, gt=0, description='Width of the cross-attention fusion output')
    fusion_after: int = Field(default=6, gt=0, description='The fusion stage runs after this many encoder layers')
    fusion_qkv: Tuple[Modality, Modality, Modality] = Field(
        default=('rgb', 'depth', 'text'), description='Modalities providing queries, keys and values to the fusion')
    text_len: int = Field(default=128, gt=0, description='Caption length in tokens after padding or truncation')
    vocab: int = Field(default=256, gt=1, description='Byte-level vocabulary size')
    pad_id: int = Field(default=0, ge=0, description='Token id used for padding')
    semseg_classes: int = Field(default=40, gt=1, description='Number of semantic classes')
    semseg_embed: int = Field(default=24, gt=0, description='Width of the per-pixel class embedding')
    modalities: List[Modality] = Field(default=list(ALL_MODALITIES), description='Modalities the model consumes')
    use_text: bool = Field(default=True, description='Use the text adapter, decoder and loss')
    use_mamba: bool = Field(default=True, description='False replaces every MambaBlock with a Transformer layer')
    use_cross_attention: bool = Field(default=True, description='Use the fusion stage and decoder cross-attention')
    mask_budget: int = Field(default=16, gt=0, description='Visible visual tokens per sample')
    dirichlet_alpha: float = Field(default=1.0, gt=0.0, description='Symmetric Dirichlet concentration')
    sentence_mask_p: float = Field(default=0.8, ge=0.0, le=1.0, description='Probability of hiding a sentence')
    mask_text_in_encoder: bool = Field(default=True, description='Hidden sentences are removed from the encoder '
                                                                 'input as well as scored')
    task_sampling: bool = Field(default=False, description='Train one uniformly selected task per step')
    loss_weights: LossWeights = Field(default_factory=LossWeights)
    loss_normalization: Normalization = Field(default='masked', description="Divide masked losses by the masked "
                                                                            "count ('masked') or by every element "
                                                                            "('total')")
    dropout: float = Field(default=0.1, ge=0.0, lt=1.0, description='Dropout probability inside residual blocks')
    depth_percentiles: Tuple[float, float] = Field(default=(1.0, 99.0),
                                                   description='Depth is clamped to these percentiles before '
                                                               'standardization')

    @model_validator(mode='after')
    def _consistent(self) -> 'ModelConfig':
        if self.image_size % self.patch:
            raise ConfigError(f'patch {self.patch} does not divide image size {self.image_size}')
        if self.d_encoder % self.encoder_heads:
            raise ConfigError(f'd_encoder {self.d_encoder} is not divisible by {self.encoder_heads} heads')
        if self.decoder.d_model % self.decoder.heads:
            raise ConfigError(f'decoder width {self.decoder.d_model} is not divisible by {self.decoder.heads} heads')
        if self.d_encoder % 4 or self.decoder.d_model % 4:
            raise ConfigError('encoder and decoder widths must be multiples of 4 for 2-d positions')
        indices = self.mamba_layer_indices
        if len(set(indices)) != len(indices) or any(not 0 <= i < self.encoder_depth for i in indices):
            raise ConfigError(f'mamba layer indices {indices} must be distinct and below {self.encoder_depth}')
        if self.fusion_after > self.encoder_depth:
            raise ConfigError(f'fusion_after {self.fusion_after} exceeds encoder depth {self.encoder_depth}')
        if not self.modalities or len(set(self.modalities)) != len(self.modalities):
            raise ConfigError(f'modalities must be a non-empty list without repeats, got {self.modalities}')
        if not self.visual_modalities:
            raise ConfigError('at least one visual modality is required')
        if self.mask_budget > self.tokens_per_modality * len(self.visual_modalities):
            raise ConfigError(f'mask budget {self.mask_budget} exceeds the '
                              f'{self.tokens_per_modality * len(self.visual_modalities)} visual tokens')
        if self.pad_id >= self.vocab:
            raise ConfigError(f'pad id {self.pad_id} is outside the vocabulary of {self.vocab}')
        low, high = self.depth_percentiles
        if not 0.0 <= low < high <= 100.0:
            raise ConfigError(f'depth percentiles must satisfy 0 <= low < high <= 100, got {low}, {high}')
        return self

    @property
    def grid(self) -> int:
        return self.image_size // self.patch

    @property
    def tokens_per_modality(self) -> int:
        return self.grid * self.grid

    @property
    def visual_modalities(self) -> List[str]:
        return [m for m in VISUAL_MODALITIES if m in self.modalities]

    @property
    def text_active(self) -> bool:
        return self.use_text and 'text' in self.modalities

    @property
    def input_modalities(self) -> List[str]:
        return self.visual_modalities + (['text'] if self.text_active else [])

    def layer_kinds(self) -> List[LayerKind]:
        mamba = set(self.mamba_layer_indices) if self.use_mamba else set()
        return [LayerKind.MAMBA if i in mamba else LayerKind.TRANSFORMER for i in range(self.encoder_depth)]

    def decoder_layout(self) -> List[LayerKind]:
        layout = self.decoder.layout()
        return layout if self.use_mamba else [LayerKind.TRANSFORMER] * len(layout)

    def decoder_sources(self) -> Dict[str, str]:
        """Decoder name -> the input modality whose visible tokens seed its query grid."""
        sources = {}
        if 'rgb' in self.modalities:
            sources['rgb'] = 'rgb'
        spatial = [m for m in ('depth', 'semseg') if m in self.modalities]
        if spatial:
            sources['depth'] = spatial[0]
        if self.text_active:
            sources['text'] = 'text'
        return sources

    def tasks(self) -> List[str]:
        """Reconstruction tasks the model can score, in loss order."""
        present = [m for m in VISUAL_MODALITIES if m in self.modalities]
        return present + (['text'] if self.text_active else [])

    def trained_tasks(self) -> List[str]:
        return [task for task in self.tasks() if self.loss_weights.weight(task) > 0.0]

    def fusion_enabled(self) -> bool:
        query, key, _ = self.fusion_qkv
        return self.use_cross_attention and query in self.input_modalities and key in self.input_modalities

    @classmethod
    def paper(cls) -> 'ModelConfig':
        """Full-size geometry: 224 pixel images, 768-wide 12-layer encoder, 98 visible tokens, 40 classes."""
        return cls(image_size=224, mask_budget=98)

    @classmethod
    def paper_flops_reference(cls) -> 'ModelConfig':
        """Full-size geometry with a single encoder MambaBlock (the last layer); used for the FLOPs comparison."""
        return cls(image_size=224, mask_budget=98, mamba_layer_indices=[11])

    @classmethod
    def desk(cls) -> 'ModelConfig':
        """Laptop-sized model: 64 pixel images (16 patches per modality) and a 128-wide encoder."""
        return cls(image_size=64, patch=16, d_encoder=128, encoder_heads=4,
                   mamba=MambaConfig(d_inner=32),
                   decoder=DecoderConfig(d_model=64, heads=4, d_inner=16),
                   d_modality=64, d_fusion=64, text_len=64, semseg_classes=4, semseg_embed=8,
                   mask_budget=16, dropout=0.0)

    @classmethod
    def toy(cls) -> 'ModelConfig':
        """Gradient-check sized model: 16 pixel images in 8 pixel patches, 8 text tokens."""
        return cls(image_size=16, patch=8, d_encoder=16, encoder_depth=4, encoder_heads=2, mlp_ratio=2,
                   mamba_layer_indices=[1, 3], fusion_after=2,
                   mamba=MambaConfig(d_inner=8),
                   decoder=DecoderConfig(d_model=8, heads=2, d_inner=4),
                   d_modality=8, d_fusion=8, text_len=8, semseg_classes=3, semseg_embed=2,
                   mask_budget=6, dropout=0.0)

    @classmethod
    def preset(cls, name: str) -> 'ModelConfig':
        match name:
            case 'paper':
                return cls.paper()
            case 'paper_flops_reference':
                return cls.paper_flops_reference()
            case 'desk':
                return cls.desk()
            case 'toy':
                return cls.toy()
            case _:
                raise ConfigError(f"unknown preset '{name}'")
