import numpy as np
import pytest
from pydantic import ValidationError

from harness import masking_statistics_suite
from masking import (MaskingError, MaskPlan, SentenceSpans, allocate_budget, full_plan, mask_text_sentences,
                     sample_mask_plan, select_task, sentence_spans)
from model import tokenize_text
from tensor import Rng

PAPER_COUNTS = {'rgb': 196, 'depth': 196, 'semseg': 196}


class TestBudget:
    def test_largest_remainder(self):
        np.testing.assert_array_equal(allocate_budget([0.5, 0.3, 0.2], 98, [196] * 3), [49, 29, 20])

    def test_ties_go_to_the_lower_index(self):
        np.testing.assert_array_equal(allocate_budget([1 / 3] * 3, 98, [196] * 3), [33, 33, 32])

    def test_overflow_is_redistributed(self):
        np.testing.assert_array_equal(allocate_budget([0.9, 0.05, 0.05], 10, [4, 10, 10]), [4, 3, 3])

    def test_all_weight_on_one_modality(self):
        np.testing.assert_array_equal(allocate_budget([1.0, 0.0, 0.0], 6, [4, 4, 4]), [4, 1, 1])

    def test_exact_for_random_ratios(self):
        rng = Rng(0)
        for i in range(200):
            ratios = rng.split(i).dirichlet([0.3, 0.3, 0.3])
            counts = allocate_budget(ratios, 98, [196] * 3)
            assert counts.sum() == 98
            assert np.all(counts >= 0)

    def test_out_of_range(self):
        with pytest.raises(MaskingError):
            allocate_budget([0.5, 0.5], 9, [4, 4])
        with pytest.raises(MaskingError):
            allocate_budget([0.5, 0.5], -1, [4, 4])

    def test_zero_budget(self):
        np.testing.assert_array_equal(allocate_budget([0.5, 0.5], 0, [4, 4]), [0, 0])


class TestPlans:
    def test_plan_spends_the_budget(self, rng):
        plan = sample_mask_plan(PAPER_COUNTS, 98, 1.0, rng)
        assert sum(plan.visible_counts().values()) == 98
        assert sum(plan.ratios.values()) == pytest.approx(1.0)
        for name in PAPER_COUNTS:
            assert plan.visible[name].dtype == bool
            np.testing.assert_array_equal(plan.masked(name), ~plan.visible[name])
            assert len(plan.visible_indices(name)) == plan.visible_counts()[name]

    def test_plan_is_a_function_of_the_stream(self):
        first = sample_mask_plan(PAPER_COUNTS, 98, 1.0, Rng(9).split(4))
        second = sample_mask_plan(PAPER_COUNTS, 98, 1.0, Rng(9).split(4))
        for name in PAPER_COUNTS:
            np.testing.assert_array_equal(first.visible[name], second.visible[name])

    def test_single_modality_takes_everything(self, rng):
        plan = sample_mask_plan({'rgb': 16}, 5, 1.0, rng)
        assert plan.ratios == {'rgb': 1.0}
        assert plan.visible_counts() == {'rgb': 5}

    def test_concentration_must_be_positive(self, rng):
        with pytest.raises(MaskingError):
            sample_mask_plan(PAPER_COUNTS, 98, 0.0, rng)

    def test_no_modality(self, rng):
        with pytest.raises(MaskingError):
            sample_mask_plan({}, 0, 1.0, rng)

    def test_inconsistent_plan_is_rejected(self):
        with pytest.raises(ValidationError):
            MaskPlan(visible={'rgb': np.ones(4, dtype=bool)}, ratios={'rgb': 1.0}, visible_budget=3)

    def test_full_plan(self):
        plan = full_plan({'rgb': 4, 'depth': 4}, text_length=6)
        assert plan.visible_counts() == {'rgb': 4, 'depth': 4}
        assert plan.text_visible.all()
        assert len(plan.visible_indices('text')) == 6

    def test_large_concentration_splits_evenly(self, rng):
        plan = sample_mask_plan({'rgb': 4, 'depth': 4, 'semseg': 4}, 6, 1000.0, rng)
        assert plan.visible_counts() == {'rgb': 2, 'depth': 2, 'semseg': 2}


class TestSentences:
    def test_spans_of_a_caption(self):
        ids, spans = tokenize_text('a red circle. a blue square.', 64)
        assert spans.spans == [(0, 13), (13, 28)]
        assert spans.length == 64
        assert ids[28:].sum() == 0

    def test_trailing_whitespace_joins_the_last_sentence(self):
        assert sentence_spans(list(b'hi. ')).spans == [(0, 4)]

    def test_text_without_terminator(self):
        assert sentence_spans(list(b'no stop')).spans == [(0, 7)]

    def test_every_terminator_splits(self):
        assert sentence_spans(list(b'a? b! c.')).spans == [(0, 2), (2, 5), (5, 8)]

    def test_padding_is_never_visible(self, rng):
        ids, spans = tokenize_text('one. two.', 16)
        visible = mask_text_sentences(spans, 0.0, rng)
        np.testing.assert_array_equal(visible, ids != 0)

    def test_whole_sentences_are_hidden(self, rng):
        _, spans = tokenize_text('first one. second one. third one.', 40)
        for i in range(20):
            visible = mask_text_sentences(spans, 0.5, rng.split(i))
            for start, end in spans.spans:
                assert visible[start:end].all() or not visible[start:end].any()

    def test_certain_masking(self, rng):
        _, spans = tokenize_text('one. two.', 16)
        assert not mask_text_sentences(spans, 1.0, rng).any()

    def test_invalid_inputs(self, rng):
        with pytest.raises(MaskingError):
            mask_text_sentences(SentenceSpans(spans=[(0, 3)], length=8), 1.5, rng)
        with pytest.raises(MaskingError):
            mask_text_sentences(SentenceSpans(spans=[(0, 5), (3, 6)], length=8), 0.5, rng)
        with pytest.raises(MaskingError):
            mask_text_sentences(SentenceSpans(spans=[(4, 10)], length=8), 0.5, rng)


class TestTasks:
    def test_uniform_selection(self):
        tasks = ['rgb', 'depth', 'semseg', 'text']
        picks = [select_task(tasks, Rng(0).split(i)) for i in range(4000)]
        for task in tasks:
            assert picks.count(task) / 4000 == pytest.approx(0.25, abs=0.03)

    def test_empty(self, rng):
        with pytest.raises(MaskingError):
            select_task([], rng)


def test_masking_statistics():
    result = masking_statistics_suite(draws=10_000, seed=0)
    assert result.passed, [c for c in result.checks if not c.passed]
