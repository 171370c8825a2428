from .combined import TASKS, LossBreakdown, LossWeights, total_loss
from .masked import (EmptyMaskWarning, LossError, Normalization, masked_cross_entropy, masked_l1, masked_mse,
                     text_cross_entropy)
