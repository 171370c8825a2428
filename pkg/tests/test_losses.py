import math

import numpy as np
import pytest

from losses import (EmptyMaskWarning, LossError, LossWeights, masked_cross_entropy, masked_l1, masked_mse,
                    text_cross_entropy, total_loss)
from tensor import NonFiniteError, Tensor, finite_audit


def leaf(values) -> Tensor:
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)


class TestMaskedRegression:
    def test_mse_over_masked_tokens(self):
        pred = leaf([[1.0, 1.0], [3.0, 3.0]])
        target = np.zeros((2, 2))
        assert masked_mse(pred, target, np.array([False, True])).item() == pytest.approx(9.0)
        assert masked_mse(pred, target, np.array([False, True]), normalize='total').item() == pytest.approx(4.5)

    def test_l1(self):
        pred = leaf([[1.0, -2.0], [3.0, 3.0]])
        assert masked_l1(pred, np.zeros((2, 2)), np.array([True, False])).item() == pytest.approx(1.5)

    def test_unmasked_tokens_have_no_influence(self, rng):
        pred = rng.normal((6, 4))
        target = rng.normal((6, 4))
        mask = np.array([True, False, True, False, False, True])
        before = masked_mse(Tensor(pred), target, mask).item()
        pred[~mask] += rng.normal(((~mask).sum(), 4)) * 100.0
        assert masked_mse(Tensor(pred), target, mask).item() - before == 0.0

    def test_gradient_vanishes_on_unmasked_tokens(self, rng):
        pred = leaf(rng.normal((3, 2)))
        masked_l1(pred, np.zeros((3, 2)), np.array([True, False, False])).backward()
        np.testing.assert_array_equal(pred.grad[1:], 0.0)

    def test_empty_mask_warns_and_returns_zero(self):
        pred = leaf(np.ones((2, 2)))
        with pytest.warns(EmptyMaskWarning):
            loss = masked_mse(pred, np.zeros((2, 2)), np.zeros(2, dtype=bool))
        assert loss.item() == 0.0
        loss.backward()
        np.testing.assert_array_equal(pred.grad, 0.0)

    def test_shape_mismatch(self):
        with pytest.raises(LossError):
            masked_mse(leaf(np.ones((2, 2))), np.zeros((2, 3)), np.ones(2, dtype=bool))
        with pytest.raises(LossError):
            masked_mse(leaf(np.ones((2, 2))), np.zeros((2, 2)), np.ones(3, dtype=bool))

    def test_unknown_normalization(self):
        with pytest.raises(LossError):
            masked_mse(leaf(np.ones((2, 2))), np.zeros((2, 2)), np.ones(2, dtype=bool), normalize='sum')


class TestCrossEntropy:
    def test_uniform_logits_over_four_classes(self):
        loss = masked_cross_entropy(Tensor(np.zeros((5, 4))), np.array([0, 1, 2, 3, 0]), np.ones(5, dtype=bool))
        assert abs(loss.item() - math.log(4.0)) < 1e-9

    def test_uniform_logits_over_the_byte_vocabulary(self):
        targets = np.array([97, 32, 98, 46, 0, 0])
        loss = text_cross_entropy(Tensor(np.zeros((6, 256))), targets)
        assert abs(loss.item() - math.log(256.0)) < 1e-9

    def test_padding_is_ignored(self, rng):
        logits = rng.normal((4, 8))
        targets = np.array([3, 5, 0, 0])
        full = text_cross_entropy(Tensor(logits), targets).item()
        logits[2:] = rng.normal((2, 8)) * 50.0
        assert text_cross_entropy(Tensor(logits), targets).item() == full

    def test_confident_correct_prediction(self):
        logits = np.full((2, 3), -30.0)
        logits[[0, 1], [2, 1]] = 30.0
        loss = masked_cross_entropy(Tensor(logits), np.array([2, 1]), np.ones(2, dtype=bool))
        assert loss.item() < 1e-20

    def test_gradient_is_softmax_minus_onehot(self):
        logits = leaf(np.zeros((1, 4)))
        masked_cross_entropy(logits, np.array([2]), np.ones(1, dtype=bool)).backward()
        np.testing.assert_allclose(logits.grad, [[0.25, 0.25, -0.75, 0.25]])

    def test_labels_out_of_range(self):
        with pytest.raises(LossError):
            masked_cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]), np.ones(2, dtype=bool))
        with pytest.raises(LossError):
            masked_cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 1, 2]), np.ones(2, dtype=bool))


class TestCombination:
    def test_weighted_sum(self):
        components = {'rgb': leaf(2.0), 'depth': leaf(3.0), 'text': leaf(5.0)}
        total, breakdown = total_loss(components, LossWeights(depth=2.0, text=0.0))
        assert total.item() == pytest.approx(8.0)
        assert breakdown.components == {'rgb': 2.0, 'depth': 3.0, 'text': 5.0}
        total.backward()
        assert components['text'].grad is None
        assert components['depth'].grad == pytest.approx(2.0)

    def test_non_finite_component_is_named(self):
        with finite_audit(False):
            with pytest.raises(NonFiniteError, match='depth'):
                total_loss({'rgb': leaf(1.0), 'depth': leaf(float('nan'))}, LossWeights())

    def test_unknown_component(self):
        with pytest.raises(LossError):
            total_loss({'audio': leaf(1.0)}, LossWeights())

    def test_all_weights_zero(self):
        with pytest.raises(LossError):
            total_loss({'rgb': leaf(1.0)}, LossWeights(rgb=0.0))

    def test_active_tasks(self):
        assert LossWeights(semseg=0.0).active() == ['rgb', 'depth', 'text']
