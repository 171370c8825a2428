from .attention import CrossAttention, SelfAttention, cross_attention
from .layers import Dropout, Embedding, LayerNorm, Linear
from .module import Module, Parameter
from .positions import sincos_positions, sincos_positions_2d, sincos_table
