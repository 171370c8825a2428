from .ablation import ablate
from .config import ABLATIONS, ALL_MODALITIES, VISUAL_MODALITIES, DecoderConfig, LayerKind, MambaConfig, ModelConfig
from .data import (ModalityBatch, denormalize_depth, detokenize, normalize_depth, patchify, tokenize_text,
                   unpatchify)
from .m3et import M3ET, DECODER_OF, Encoded, Prediction, adaptive_pool_matrix, draw_plans
