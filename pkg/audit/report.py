"""Audit records, comparisons and their rendering."""
from typing import Dict, List, Optional

from pydantic import BaseModel
from rich.table import Table

from tensor import M3etError

CONVENTION = 'mac2-elementwise5/v1'
CONVENTION_TEXT = ('FLOPs: one multiply-accumulate = 2 FLOPs; a linear layer on T tokens = 2*T*in*out; attention '
                   'scores and weighted values = 2*Tq*Tk*d each; layer norm, GELU, softplus and softmax = 5 FLOPs '
                   'per element; additions of residuals and positions are not counted. Batch size 1.')


class AuditError(M3etError, ValueError):
    """Incomplete geometry or incomparable reports."""


class BlockRecord(BaseModel):
    name: str
    kind: str
    params: int
    flops: int = 0
    activations: int = 0


class AuditReport(BaseModel):
    label: str
    convention: str = CONVENTION
    blocks: List[BlockRecord]

    @property
    def total_params(self) -> int:
        return sum(b.params for b in self.blocks)

    @property
    def total_flops(self) -> int:
        return sum(b.flops for b in self.blocks)

    def block(self, name: str) -> BlockRecord:
        for record in self.blocks:
            if record.name == name:
                return record
        raise AuditError(f"no block '{name}' in report '{self.label}'")

    def by_kind(self) -> Dict[str, int]:
        """Parameters summed per block kind, in order of first appearance."""
        counts: Dict[str, int] = {}
        for record in self.blocks:
            counts[record.kind] = counts.get(record.kind, 0) + record.params
        return counts

    def to_jsonl(self) -> str:
        """One record per block, then the totals."""
        lines = [record.model_dump_json() for record in self.blocks]
        lines.append(BlockRecord(name='total', kind='total', params=self.total_params, flops=self.total_flops,
                                 activations=max((b.activations for b in self.blocks), default=0))
                     .model_dump_json())
        return '\n'.join(lines) + '\n'


class BlockDelta(BaseModel):
    name: str
    params_a: int
    params_b: int
    flops_a: int
    flops_b: int

    @property
    def params_delta(self) -> int:
        return self.params_b - self.params_a

    @property
    def flops_delta(self) -> int:
        return self.flops_b - self.flops_a


def _reduction(a: int, b: int) -> Optional[float]:
    return (a - b) / a if a else None


class ComparisonReport(BaseModel):
    label_a: str
    label_b: str
    blocks: List[BlockDelta]
    params_a: int
    params_b: int
    flops_a: int
    flops_b: int

    @property
    def params_delta(self) -> int:
        return self.params_b - self.params_a

    @property
    def flops_delta(self) -> int:
        return self.flops_b - self.flops_a

    @property
    def param_reduction(self) -> Optional[float]:
        """(a - b) / a: the fraction of ``a``'s parameters that ``b`` saves."""
        return _reduction(self.params_a, self.params_b)

    @property
    def flops_reduction(self) -> Optional[float]:
        return _reduction(self.flops_a, self.flops_b)


def compare(report_a: AuditReport, report_b: AuditReport) -> ComparisonReport:
    """Per-block and total deltas from ``report_a`` to ``report_b``; blocks missing on one side count as 0."""
    if report_a.convention != report_b.convention:
        raise AuditError(f"cannot compare FLOPs conventions '{report_a.convention}' and '{report_b.convention}'")
    a = {r.name: r for r in report_a.blocks}
    b = {r.name: r for r in report_b.blocks}
    names = list(a) + [name for name in b if name not in a]
    empty = BlockRecord(name='', kind='', params=0)
    blocks = [BlockDelta(name=name, params_a=a.get(name, empty).params, params_b=b.get(name, empty).params,
                         flops_a=a.get(name, empty).flops, flops_b=b.get(name, empty).flops) for name in names]
    return ComparisonReport(label_a=report_a.label, label_b=report_b.label, blocks=blocks,
                            params_a=report_a.total_params, params_b=report_b.total_params,
                            flops_a=report_a.total_flops, flops_b=report_b.total_flops)


def _percent(value: Optional[float]) -> str:
    return 'n/a' if value is None else f'{100.0 * value:.2f}%'


def audit_table(report: AuditReport) -> Table:
    table = Table(title=f'{report.label}  ({report.convention})', caption=CONVENTION_TEXT)
    table.add_column('block')
    table.add_column('kind')
    table.add_column('params', justify='right')
    table.add_column('FLOPs', justify='right')
    for record in report.blocks:
        table.add_row(record.name, record.kind, f'{record.params:,}', f'{record.flops:,}')
    for kind, params in report.by_kind().items():
        table.add_row(f'all {kind}', kind, f'{params:,}', '', style='dim')
    table.add_row('total', '', f'{report.total_params:,}', f'{report.total_flops:,}', style='bold')
    return table


def comparison_table(comparison: ComparisonReport) -> Table:
    table = Table(title=f'{comparison.label_a} -> {comparison.label_b}')
    table.add_column('block')
    table.add_column('params a', justify='right')
    table.add_column('params b', justify='right')
    table.add_column('delta', justify='right')
    table.add_column('FLOPs delta', justify='right')
    for delta in comparison.blocks:
        if delta.params_delta or delta.flops_delta:
            table.add_row(delta.name, f'{delta.params_a:,}', f'{delta.params_b:,}', f'{delta.params_delta:+,}',
                          f'{delta.flops_delta:+,}')
    table.add_row('total', f'{comparison.params_a:,}', f'{comparison.params_b:,}', f'{comparison.params_delta:+,}',
                  f'{comparison.flops_delta:+,}', style='bold')
    table.caption = (f'parameter reduction {_percent(comparison.param_reduction)}, '
                     f'FLOPs reduction {_percent(comparison.flops_reduction)}')
    return table
