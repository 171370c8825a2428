from .core import (PRECISIONS, Tensor, abs_, apply_op, as_tensor, backward, broadcast_to, concat, cumsum, exp,
                   finite_audit, finite_audit_enabled, get_dtype, get_precision, getitem, log, matmul, mean, no_grad,
                   precision, reshape, set_finite_audit, set_precision, square, stack, sum_, take, transpose)
from .errors import ConfigError, GradientError, M3etError, NonFiniteError, ShapeError
from .functional import gelu, layer_norm, log_softmax, pick, softmax, softplus
from .gradcheck import grad_check
from .rng import Rng
