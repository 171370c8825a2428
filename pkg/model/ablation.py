from tensor import ConfigError

from .config import ABLATIONS, ModelConfig


def ablate(cfg: ModelConfig, which: str) -> ModelConfig:
    """Returns a copy of ``cfg`` with one architectural component removed.

    ``no_text`` drops the text adapter, decoder and loss; ``no_mamba`` turns every MambaBlock (encoder and
    decoders) into a Transformer layer of the same width; ``no_cross_attention`` removes the fusion stage and the
    shared decoder cross-attention.
    """
    match which:
        case 'no_text':
            update = {'use_text': False, 'loss_weights': cfg.loss_weights.model_copy(update={'text': 0.0})}
        case 'no_mamba':
            update = {'use_mamba': False}
        case 'no_cross_attention':
            update = {'use_cross_attention': False}
        case _:
            raise ConfigError(f"unknown ablation '{which}', expected one of {ABLATIONS}")
    return ModelConfig.model_validate({**cfg.model_dump(), **update})
