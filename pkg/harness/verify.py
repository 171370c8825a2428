"""Self-verification suites: SSM form equivalence, masking statistics and gradient checks."""
import logging
from typing import Callable, List

import numpy as np
from pydantic import BaseModel
from rich.table import Table

from masking import SentenceSpans, mask_text_sentences, sample_mask_plan
from model import M3ET, ModelConfig, draw_plans
from nn import CrossAttention, LayerNorm, Linear, Module, SelfAttention
from nn.blocks import MambaBlock, TransformerLayer
from ssm import SelectiveParams, SsmParams, selective_scan, selective_steps, ssd_apply, ssd_materialize, ssm_conv, \
    ssm_scan
from tensor import Rng, Tensor, grad_check, precision

from .synthetic import generate_synthetic

logger = logging.getLogger(__name__)

SSM_TOLERANCE = 1e-10
GRADIENT_TOLERANCE = 1e-4


class CheckResult(BaseModel):
    name: str
    value: float
    low: float
    high: float

    @property
    def passed(self) -> bool:
        return self.low <= self.value <= self.high


class SuiteResult(BaseModel):
    suite: str
    checks: List[CheckResult]

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)


def ssm_equivalence_suite(instances: int = 100, seed: int = 0) -> SuiteResult:
    """Largest deviation between the scan, convolution and materialized-matrix forms, and between the selective
    scan and its per-step matrix form, over random 64-bit instances (N <= 8, L <= 64)."""
    static_worst = 0.0
    selective_worst = 0.0
    with precision('float64'):
        for i in range(instances):
            rng = Rng(seed).split('ssm').split(i)
            n = int(rng.integers(1, 9))
            length = int(rng.integers(1, 65))
            p = SsmParams(a=-rng.uniform(n, 0.05, 2.0), b=rng.normal(n), c=rng.normal(n),
                          delta=float(rng.uniform(None, 0.01, 0.5)))
            x = Tensor(rng.normal(length))
            scan = ssm_scan(x, p).numpy()
            conv = ssm_conv(x, p).numpy()
            matrix = ssd_apply(ssd_materialize(p, length), x).numpy()
            static_worst = max(static_worst, np.abs(scan - conv).max(), np.abs(scan - matrix).max())

            d_in = int(rng.integers(1, 4))
            sel = SelectiveParams(d_in, n, rng.split('selective'))
            xs = rng.normal((length, d_in))
            y = selective_scan(Tensor(xs), sel).numpy()
            for channel in range(d_in):
                m = ssd_materialize(selective_steps(Tensor(xs), sel, channel), length)
                per_step = ssd_apply(m, Tensor(xs[:, channel])).numpy()
                selective_worst = max(selective_worst, np.abs(per_step - y[:, channel]).max())
    return SuiteResult(suite='ssm equivalence', checks=[
        CheckResult(name=f'static forms, max deviation over {instances}', value=static_worst, low=0.0,
                    high=SSM_TOLERANCE),
        CheckResult(name=f'selective scan vs matrix form, max deviation over {instances}', value=selective_worst,
                    low=0.0, high=SSM_TOLERANCE),
    ])


def masking_statistics_suite(draws: int = 10_000, seed: int = 0) -> SuiteResult:
    """Dirichlet(1) ratio means over three modalities, whole-sentence masking rate at p = 0.8, and exact budgets at
    full-size geometry (196 tokens per modality, 98 visible)."""
    counts = {'rgb': 196, 'depth': 196, 'semseg': 196}
    root = Rng(seed).split('masking')
    ratios = np.zeros(3)
    budget_errors = 0
    for i in range(draws):
        plan = sample_mask_plan(counts, 98, 1.0, root.split('plans').split(i))
        ratios += [plan.ratios[name] for name in counts]
        budget_errors += sum(plan.visible_counts().values()) != 98
    ratios /= draws

    spans = SentenceSpans(spans=[(0, 10), (10, 20), (20, 30), (30, 40), (40, 50)], length=64)
    hidden = 0
    for i in range(draws):
        visible = mask_text_sentences(spans, 0.8, root.split('sentences').split(i))
        hidden += sum(not visible[start] for start, _ in spans.spans)
    rate = hidden / (draws * len(spans))

    checks = [CheckResult(name=f'mean {name} ratio', value=float(ratio), low=0.313, high=0.353)
              for name, ratio in zip(counts, ratios)]
    checks.append(CheckResult(name='hidden sentence rate at p=0.8', value=rate, low=0.79, high=0.81))
    checks.append(CheckResult(name='plans missing the budget of 98', value=float(budget_errors), low=0.0, high=0.0))
    return SuiteResult(suite='masking statistics', checks=checks)


def _projected(module: Callable[[Tensor], Tensor], rng: Rng) -> Callable[[Tensor], Tensor]:
    """Scalar test function: the module output dotted with a fixed random tensor."""
    weights = {}

    def f(x: Tensor) -> Tensor:
        out = module(x)
        if 'w' not in weights:
            weights['w'] = Tensor(rng.normal(out.shape))
        return (out * weights['w']).sum()

    return f


def _block_cases(rng: Rng) -> List[tuple]:
    d, tokens = 8, 5
    cross = CrossAttention(d, 4, rng.split('cross'))
    context = Tensor(rng.split('context').normal((tokens + 2, d)))
    return [
        ('linear', Linear(d, 6, rng.split('linear'))),
        ('layer norm', LayerNorm(d)),
        ('self-attention', SelfAttention(d, 2, rng.split('attention'))),
        ('cross-attention', lambda x: cross(x, context, context)),
        ('transformer layer', TransformerLayer(d, 2, rng.split('transformer'), mlp_ratio=2, dropout=0.0)),
        ('mamba block', MambaBlock(d, 4, rng.split('mamba'), dropout=0.0)),
        ('mamba block with ssm', MambaBlock(d, 4, rng.split('mamba_ssm'), dropout=0.0, inner_ssm=True,
                                            ssm_state=3)),
        ('selective scan', SelectiveParams(d, 3, rng.split('selective'))),
    ]


def gradient_suite(seed: int = 0, max_elements: int = 24) -> SuiteResult:
    """Central-difference checks of every block with respect to its input, and of the toy model with respect to a
    sample of its parameters."""
    rng = Rng(seed).split('gradients')
    checks = []
    with precision('float64'):
        for name, block in _block_cases(rng.split('blocks')):
            if isinstance(block, Module):
                block.eval()
            x = Tensor(rng.split(name).normal((5, 8)), requires_grad=True)
            error = grad_check(_projected(block, rng.split(name).split('w')), x,
                               max_elements=max_elements, rng=rng.split(name).split('elements'))
            checks.append(CheckResult(name=name, value=error, low=0.0, high=GRADIENT_TOLERANCE))

        cfg = ModelConfig.toy()
        model = M3ET(cfg, rng.split('model'))
        batch = generate_synthetic(seed, 2, cfg, 'gradients').batch([0, 1], cfg)
        plans = draw_plans(cfg, batch, rng.split('plans'))

        def loss(_: Tensor) -> Tensor:
            return model.forward_train(batch, plans)[0]

        for name in _toy_parameters(model):
            parameter = dict(model.named_parameters())[name]
            error = grad_check(loss, parameter, max_elements=max_elements // 3, rng=rng.split(name))
            checks.append(CheckResult(name=f'toy model: {name}', value=error, low=0.0, high=GRADIENT_TOLERANCE))
    return SuiteResult(suite='gradients', checks=checks)


def _toy_parameters(model: M3ET) -> List[str]:
    """One parameter from every top-level part of the model."""
    chosen, seen = [], set()
    for name, _ in model.named_parameters():
        parts = name.split('.')
        group = '.'.join(parts[:2])
        if group not in seen:
            seen.add(group)
            chosen.append(name)
    return chosen


def suite_table(results: List[SuiteResult]) -> Table:
    table = Table(title='Verification')
    for column in ('suite', 'check', 'value', 'accepted range', 'result'):
        table.add_column(column)
    for result in results:
        for check in result.checks:
            table.add_row(result.suite, check.name, f'{check.value:.4g}', f'[{check.low:g}, {check.high:g}]',
                          '[green]pass[/green]' if check.passed else '[red]FAIL[/red]')
    return table
