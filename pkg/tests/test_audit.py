import json

import pytest

from audit import (CONVENTION, AuditError, AuditGeometry, AuditReport, audit_table, block_of, compare, count_params,
                   cross_attention_params, estimate_flops, estimate_memory, linear_flops, linear_params,
                   mamba_block_flops, mamba_block_params, transformer_layer_flops, transformer_layer_params)
from model import ModelConfig, ablate

PUBLISHED_PARAMS = 65_390_000


class TestFormulas:
    def test_layer_parameters(self):
        assert transformer_layer_params(768) == 7_087_872
        assert mamba_block_params(768, 64) == 100_672
        assert linear_params(768, 256) == 196_864
        assert linear_params(768, 256, bias=False) == 196_608
        assert cross_attention_params(256, 256) == 3 * 65_792

    def test_linear_flops(self):
        assert linear_flops(98, 768, 768) == 115_605_504

    def test_small_transformer_layer_by_hand(self):
        assert transformer_layer_flops(tokens=2, d=4, heads=2, mlp_ratio=4) == 1112

    def test_mamba_block_is_far_cheaper_than_attention(self):
        assert mamba_block_flops(98, 768, 64) * 10 < transformer_layer_flops(98, 768, 12)


class TestFullScale:
    def test_total_parameters_near_published_size(self):
        total = count_params(ModelConfig.paper()).total_params
        assert abs(total - PUBLISHED_PARAMS) / PUBLISHED_PARAMS < 0.02

    def test_encoder_layers(self):
        report = count_params(ModelConfig.paper())
        assert report.block('encoder.0').params == 7_087_872
        assert report.block('encoder.1').params == 100_672
        assert report.block('encoder.1').kind == 'mamba'

    def test_single_mamba_layer_flops_reduction(self):
        cfg = ModelConfig.paper_flops_reference()
        comparison = compare(estimate_flops(ablate(cfg, 'no_mamba')), estimate_flops(cfg))
        assert 0.079 <= comparison.flops_reduction <= 0.099

    def test_transformer_only_variant_costs_more(self):
        cfg = ModelConfig.paper()
        full, baseline = estimate_flops(cfg), estimate_flops(ablate(cfg, 'no_mamba'))
        assert baseline.total_params > full.total_params
        assert baseline.total_flops > full.total_flops
        comparison = compare(baseline, full)
        assert comparison.param_reduction == pytest.approx(
            (baseline.total_params - full.total_params) / baseline.total_params)
        # six swapped layers at this total leave the saving near 40%, short of the published figure; DESIGN.md
        # records the gap as a deliberate deviation
        assert 0.3 < comparison.param_reduction < 0.6

    def test_geometry(self):
        geometry = AuditGeometry.from_config(ModelConfig.paper())
        assert geometry.visible == {'rgb': 33, 'depth': 33, 'semseg': 32}
        assert geometry.encoder_tokens == 98 + 128
        assert geometry.decoder_queries == {'rgb': 196, 'depth': 196, 'text': 128}

    def test_no_text_geometry_drops_the_caption(self):
        geometry = AuditGeometry.from_config(ablate(ModelConfig.paper(), 'no_text'))
        assert geometry.text_tokens == 0
        assert 'text' not in geometry.decoder_queries


class TestReports:
    def test_block_names(self):
        assert block_of('encoder.3.attn.proj_q.weight') == 'encoder.3'
        assert block_of('decoder.rgb.layers.0.norm1.gamma') == 'decoder.rgb'
        assert block_of('fusion.attention.proj_k.bias') == 'fusion'
        assert block_of('encoder_norm.gamma') == 'encoder_norm'

    def test_unknown_block(self):
        with pytest.raises(AuditError):
            count_params(ModelConfig.toy()).block('encoder.99')

    def test_jsonl_ends_with_totals(self):
        report = estimate_flops(ModelConfig.toy())
        lines = [json.loads(line) for line in report.to_jsonl().splitlines()]
        assert len(lines) == len(report.blocks) + 1
        assert lines[-1]['name'] == 'total'
        assert lines[-1]['params'] == report.total_params
        assert lines[-1]['flops'] == report.total_flops

    def test_table_subtotals_each_kind(self):
        report = estimate_flops(ModelConfig.toy())
        kinds = report.by_kind()
        assert list(kinds) == list(dict.fromkeys(b.kind for b in report.blocks))
        assert sum(kinds.values()) == report.total_params
        assert audit_table(report).row_count == len(report.blocks) + len(kinds) + 1

    def test_conventions_must_match(self):
        other = AuditReport(label='x', convention='other', blocks=[])
        with pytest.raises(AuditError):
            compare(other, estimate_flops(ModelConfig.toy()))
        assert estimate_flops(ModelConfig.toy()).convention == CONVENTION

    def test_removed_blocks_count_as_zero(self):
        cfg = ModelConfig.toy()
        comparison = compare(estimate_flops(cfg), estimate_flops(ablate(cfg, 'no_cross_attention')))
        fusion = next(b for b in comparison.blocks if b.name == 'fusion')
        assert fusion.params_b == 0 and fusion.params_a > 0

    def test_incomplete_geometry(self):
        cfg = ModelConfig.toy()
        with pytest.raises(AuditError):
            estimate_flops(cfg, AuditGeometry(visible={'rgb': 2}, decoder_queries={}))


class TestMemory:
    def test_training_needs_more_than_inference(self):
        cfg = ModelConfig.desk()
        inference = estimate_memory(cfg)
        training = estimate_memory(cfg, training=True)
        assert training.param_bytes == 4 * inference.param_bytes
        assert training.activation_bytes > inference.activation_bytes

    def test_precision_doubles_the_bytes(self):
        cfg = ModelConfig.toy()
        single, double = estimate_memory(cfg, precision='float32'), estimate_memory(cfg, precision='float64')
        assert double.total_bytes == 2 * single.total_bytes
        with pytest.raises(AuditError):
            estimate_memory(cfg, precision='float16')
