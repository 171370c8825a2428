import math

import numpy as np
import pytest

from tensor import (ConfigError, GradientError, NonFiniteError, Rng, ShapeError, Tensor, concat, finite_audit,
                    gelu, get_precision, grad_check, layer_norm, log, log_softmax, no_grad, pick, precision,
                    set_precision, softmax, softplus, stack, take)


def leaf(values) -> Tensor:
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)


class TestElementwise:
    def test_equal_shapes(self):
        a, b = leaf([1.0, 2.0]), leaf([3.0, 4.0])
        (a * b).sum().backward()
        np.testing.assert_array_equal(a.grad, [3.0, 4.0])
        np.testing.assert_array_equal(b.grad, [1.0, 2.0])

    def test_scalar_operand_gets_summed_gradient(self):
        a, s = leaf([1.0, 2.0, 3.0]), leaf(2.0)
        (a * s).sum().backward()
        assert s.grad.shape == ()
        assert s.grad == pytest.approx(6.0)

    def test_implicit_broadcast_is_rejected(self):
        with pytest.raises(ShapeError):
            leaf(np.ones((2, 3))) + leaf(np.ones(3))

    def test_explicit_broadcast_sums_back(self):
        row = leaf(np.ones((1, 3)))
        row.broadcast_to((4, 3)).sum().backward()
        np.testing.assert_array_equal(row.grad, np.full((1, 3), 4.0))

    def test_division_and_python_numbers(self):
        x = leaf([2.0, 4.0])
        (1.0 - x / 2.0).sum().backward()
        np.testing.assert_allclose(x.grad, [-0.5, -0.5])

    def test_zero_extent_is_rejected(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((0, 3)))


class TestShapes:
    def test_matmul_gradient(self):
        a, b = leaf(np.arange(6.0).reshape(2, 3)), leaf(np.ones((3, 2)))
        (a @ b).sum().backward()
        np.testing.assert_array_equal(a.grad, np.ones((2, 3)) * 2.0)
        np.testing.assert_array_equal(b.grad, np.tile(a.data.sum(axis=0)[:, None], (1, 2)))

    def test_matmul_inner_mismatch(self):
        with pytest.raises(ShapeError):
            leaf(np.ones((2, 3))) @ leaf(np.ones((2, 3)))

    def test_take_accumulates_repeats(self):
        table = leaf(np.ones((4, 2)))
        take(table, np.array([1, 1, 3])).sum().backward()
        np.testing.assert_array_equal(table.grad[:, 0], [0.0, 2.0, 0.0, 1.0])

    def test_concat_and_stack_split_gradients(self):
        a, b = leaf(np.ones((2, 2))), leaf(np.ones((1, 2)))
        (concat([a, b]) * 3.0).sum().backward()
        np.testing.assert_array_equal(a.grad, np.full((2, 2), 3.0))
        np.testing.assert_array_equal(b.grad, np.full((1, 2), 3.0))
        with pytest.raises(ShapeError):
            stack([leaf(np.ones(2)), leaf(np.ones(3))])

    def test_reshape_rejects_bad_shape(self):
        with pytest.raises(ShapeError):
            leaf(np.ones(6)).reshape(4, 2)

    def test_slicing_gradient(self):
        x = leaf(np.arange(5.0))
        x[1:3].sum().backward()
        np.testing.assert_array_equal(x.grad, [0.0, 1.0, 1.0, 0.0, 0.0])


class TestBackward:
    def test_non_scalar_loss(self):
        with pytest.raises(GradientError):
            (leaf([1.0, 2.0]) * 2.0).backward()

    def test_loss_not_on_tape(self):
        with pytest.raises(GradientError):
            Tensor(1.0).backward()

    def test_second_call(self):
        x = leaf([1.0])
        loss = (x * x).sum()
        loss.backward()
        with pytest.raises(GradientError):
            loss.backward()

    def test_stale_leaf_gradient(self):
        x = leaf([1.0])
        (x * x).sum().backward()
        with pytest.raises(GradientError):
            (x * 3.0).sum().backward()
        x.grad = None
        (x * 3.0).sum().backward()
        np.testing.assert_array_equal(x.grad, [3.0])

    def test_shared_subexpression_accumulates(self):
        x = leaf([3.0])
        y = x * x
        (y + y).sum().backward()
        np.testing.assert_array_equal(x.grad, [12.0])

    def test_no_grad_records_nothing(self):
        x = leaf([1.0])
        with no_grad():
            y = x * 2.0
        assert not y.requires_grad
        assert y.is_leaf


class TestPrecisionAndAudit:
    def test_precision_switch(self):
        with precision('float32'):
            assert Tensor(1.0).dtype == np.float32
            assert get_precision() == 'float32'
        assert Tensor(1.0).dtype == np.float64

    def test_unknown_precision(self):
        with pytest.raises(ConfigError):
            set_precision('float16')

    def test_audit_names_the_operation(self):
        with pytest.raises(NonFiniteError, match="'log'"):
            with np.errstate(all='ignore'):
                log(Tensor([-1.0]))

    def test_audit_off_lets_nan_through(self):
        with finite_audit(False), np.errstate(all='ignore'):
            out = log(Tensor([-1.0]))
        assert not out.is_finite()


class TestFunctional:
    def test_exact_gelu(self):
        values = gelu(Tensor([0.0, 1.0, -1.0])).numpy()
        np.testing.assert_allclose(values, [0.0, 0.8413447460685429, -0.15865525393145707], rtol=1e-12)

    def test_softmax_rows_sum_to_one(self):
        out = softmax(Tensor(np.array([[1.0, 2.0, 3.0], [1000.0, 1000.0, 1000.0]]))).numpy()
        np.testing.assert_allclose(out.sum(axis=-1), [1.0, 1.0])
        np.testing.assert_allclose(out[1], [1 / 3] * 3)

    def test_log_softmax_of_uniform_logits(self):
        out = log_softmax(Tensor(np.zeros((2, 4)))).numpy()
        np.testing.assert_allclose(out, -math.log(4.0))

    def test_layer_norm_statistics(self, rng):
        x = Tensor(rng.normal((3, 8)) * 5.0 + 2.0)
        out = layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8))).numpy()
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.var(axis=-1), 1.0, rtol=1e-4)

    def test_pick_shape_check(self):
        with pytest.raises(ShapeError):
            pick(Tensor(np.zeros((2, 3))), np.array([0, 1, 2]))

    @pytest.mark.parametrize('f', [gelu, softplus, lambda t: softmax(t), lambda t: log_softmax(t)],
                             ids=['gelu', 'softplus', 'softmax', 'log_softmax'])
    def test_gradients_match_finite_differences(self, f, rng):
        x = Tensor(rng.normal((3, 4)), requires_grad=True)
        weights = Tensor(rng.normal((3, 4)))
        assert grad_check(lambda t: (f(t) * weights).sum(), x) < 1e-6

    def test_layer_norm_gradient(self, rng):
        x = Tensor(rng.normal((4, 6)), requires_grad=True)
        gamma, beta, weights = Tensor(rng.normal(6)), Tensor(rng.normal(6)), Tensor(rng.normal((4, 6)))
        assert grad_check(lambda t: (layer_norm(t, gamma, beta) * weights).sum(), x) < 1e-6

    def test_grad_check_needs_64_bit(self):
        with precision('float32'):
            x = Tensor([1.0], requires_grad=True)
        with pytest.raises(GradientError):
            grad_check(lambda t: t.sum(), x)


class TestRng:
    def test_split_is_pure(self):
        parent = Rng(7)
        first = parent.split('a').normal(4)
        parent.normal(100)
        np.testing.assert_array_equal(parent.split('a').normal(4), first)

    def test_distinct_keys_give_distinct_streams(self):
        root = Rng(7)
        assert not np.array_equal(root.split(0).normal(4), root.split(1).normal(4))
        assert not np.array_equal(root.split('x').normal(4), root.split('y').normal(4))

    def test_draws_advance(self):
        stream = Rng(3)
        assert not np.array_equal(stream.normal(3), stream.normal(3))

    def test_choice_is_sorted_and_distinct(self):
        picked = Rng(0).choice(50, 10)
        assert len(set(picked.tolist())) == 10
        assert np.all(np.diff(picked) > 0)

    def test_truncated_normal_bound(self):
        values = Rng(0).truncated_normal(10_000, std=1.0, bound=2.0)
        assert np.abs(values).max() <= 2.0

    def test_dirichlet_lies_on_the_simplex(self):
        draw = Rng(0).dirichlet([1.0, 1.0, 1.0])
        assert draw.sum() == pytest.approx(1.0)
        assert np.all(draw >= 0.0)

    def test_negative_key(self):
        with pytest.raises(ValueError):
            Rng(0).split(-1)
