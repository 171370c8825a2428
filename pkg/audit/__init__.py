from .counting import (AuditGeometry, MemoryEstimate, block_of, count_params, cross_attention_params,
                       estimate_flops, estimate_memory, linear_flops, linear_params, mamba_block_flops,
                       mamba_block_params, transformer_layer_flops, transformer_layer_params)
from .report import (CONVENTION, CONVENTION_TEXT, AuditError, AuditReport, BlockDelta, BlockRecord,
                     ComparisonReport, audit_table, compare, comparison_table)
