from .discrete import (SsmError, SsmParams, causal_toeplitz, discretize, ssm_conv, ssm_kernel, ssm_scan,
                       zoh_input_scale)
from .duality import StepParams, ssd_apply, ssd_materialize, static_steps
from .selective import SelectiveParams, selective_scan, selective_steps
