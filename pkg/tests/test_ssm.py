import math

import numpy as np
import pytest

from harness import ssm_equivalence_suite
from ssm import (SelectiveParams, SsmError, SsmParams, causal_toeplitz, discretize, selective_scan, selective_steps,
                 ssd_apply, ssd_materialize, ssm_conv, ssm_kernel, ssm_scan)
from tensor import NonFiniteError, Rng, Tensor, grad_check

TOLERANCE = 1e-10


def random_params(rng: Rng, n: int) -> SsmParams:
    return SsmParams(a=-rng.uniform(n, 0.05, 2.0), b=rng.normal(n), c=rng.normal(n),
                     delta=float(rng.uniform(None, 0.01, 0.5)))


class TestStaticForms:
    def test_halving_decay(self):
        p = SsmParams(a=[-1.0], b=[1.0], c=[1.0], delta=math.log(2.0))
        a_bar, b_bar = discretize(p)
        assert a_bar.item() == pytest.approx(0.5)
        assert b_bar.item() == pytest.approx(0.5)
        np.testing.assert_allclose(ssm_scan(np.array([1.0, 0.0, 0.0]), p).numpy(), [0.5, 0.25, 0.125])

    def test_zero_transition_is_an_integrator(self):
        p = SsmParams(a=[0.0], b=[2.0], c=[1.5], delta=0.1)
        y = ssm_scan(np.ones(4), p).numpy()
        np.testing.assert_allclose(y, 1.5 * 0.1 * 2.0 * np.arange(1, 5), rtol=1e-12)

    @pytest.mark.parametrize('n, length', [(1, 1), (3, 7), (8, 64)])
    def test_scan_convolution_and_matrix_agree(self, n, length):
        rng = Rng(n * 100 + length)
        p = random_params(rng, n)
        x = Tensor(rng.normal(length))
        scan = ssm_scan(x, p).numpy()
        assert np.abs(scan - ssm_conv(x, p).numpy()).max() < TOLERANCE
        assert np.abs(scan - ssd_apply(ssd_materialize(p, length), x).numpy()).max() < TOLERANCE

    def test_matrix_is_lower_triangular(self, rng):
        m = ssd_materialize(random_params(rng, 4), 6).numpy()
        np.testing.assert_array_equal(np.triu(m, 1), 0.0)

    def test_toeplitz_layout(self):
        t = causal_toeplitz(Tensor([1.0, 2.0, 3.0])).numpy()
        np.testing.assert_array_equal(t, [[1, 0, 0], [2, 1, 0], [3, 2, 1]])

    def test_kernel_matches_impulse_response(self, rng):
        p = random_params(rng, 5)
        impulse = np.zeros(9)
        impulse[0] = 1.0
        np.testing.assert_allclose(ssm_kernel(p, 9).numpy(), ssm_scan(impulse, p).numpy(), atol=TOLERANCE)

    def test_gradients(self, rng):
        p = random_params(rng, 3)
        x = Tensor(rng.normal(6), requires_grad=True)
        assert grad_check(lambda t: (ssm_scan(t, p) * Tensor(np.arange(6.0))).sum(), x) < 1e-6

        a = Tensor(p.a.numpy().copy(), requires_grad=True)
        inputs = Tensor(rng.normal(6))
        assert grad_check(lambda t: ssm_conv(inputs, SsmParams(a=t, b=p.b, c=p.c, delta=p.delta)).sum(), a) < 1e-6


class TestValidation:
    def test_non_positive_step(self):
        with pytest.raises(SsmError):
            ssm_scan(np.ones(3), SsmParams(a=[-1.0], b=[1.0], c=[1.0], delta=0.0))

    def test_mismatched_vectors(self):
        with pytest.raises(SsmError):
            ssm_scan(np.ones(3), SsmParams(a=[-1.0, -2.0], b=[1.0], c=[1.0, 1.0], delta=0.1))

    def test_sequence_must_be_1d(self):
        with pytest.raises(SsmError):
            ssm_conv(np.ones((3, 2)), SsmParams(a=[-1.0], b=[1.0], c=[1.0], delta=0.1))

    def test_materialize_cap(self, rng):
        with pytest.raises(SsmError):
            ssd_materialize(random_params(rng, 2), 20, cap=10)


class TestSelective:
    def test_output_shape(self, rng):
        sel = SelectiveParams(3, 4, rng)
        assert selective_scan(Tensor(rng.normal((7, 3))), sel).shape == (7, 3)

    def test_initial_transition_and_step(self, rng):
        sel = SelectiveParams(2, 3, rng)
        np.testing.assert_allclose(sel.transition().numpy(), [[-1, -2, -3], [-1, -2, -3]])
        zero_input = Tensor(np.zeros((1, 2)))
        assert sel.step_sizes(zero_input).item() == pytest.approx(0.1)

    def test_causality(self, rng):
        sel = SelectiveParams(2, 3, rng)
        x = rng.normal((8, 2))
        y = selective_scan(Tensor(x), sel).numpy()
        x[5:] += 10.0
        np.testing.assert_array_equal(selective_scan(Tensor(x), sel).numpy()[:5], y[:5])

    def test_matches_per_step_matrix_form(self, rng):
        sel = SelectiveParams(3, 4, rng)
        x = Tensor(rng.normal((12, 3)))
        y = selective_scan(x, sel).numpy()
        for channel in range(3):
            m = ssd_materialize(selective_steps(x, sel, channel), 12)
            per_step = ssd_apply(m, Tensor(x.numpy()[:, channel])).numpy()
            assert np.abs(per_step - y[:, channel]).max() < TOLERANCE

    def test_input_width_check(self, rng):
        with pytest.raises(SsmError):
            selective_scan(Tensor(np.ones((4, 5))), SelectiveParams(3, 2, rng))

    def test_overflowing_step_size_is_reported(self, rng):
        sel = SelectiveParams(1, 2, rng)
        sel.s_delta.weight.data[:] = 1e308
        with pytest.raises(NonFiniteError):
            sel.step_sizes(Tensor(np.full((3, 1), 10.0)))

    def test_gradient_through_parameters(self, rng):
        sel = SelectiveParams(2, 3, rng)
        x = Tensor(rng.normal((5, 2)))
        weights = Tensor(rng.normal((5, 2)))
        assert grad_check(lambda _: (selective_scan(x, sel) * weights).sum(), sel.s_b.weight) < 1e-6


def test_equivalence_suite_passes():
    result = ssm_equivalence_suite(instances=20, seed=3)
    assert result.passed, [c for c in result.checks if not c.passed]
