"""Autodiff core: finite-difference oracles, closed-form gradients, invariants."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.special import erf

from icl_lab import gradcheck
from icl_lab import ndtensor as nd


def finite_rows(rows, cols, lo=-50.0, hi=50.0):
    return arrays(
        np.float64,
        (rows, cols),
        elements=st.floats(min_value=lo, max_value=hi, allow_nan=False),
    )


class TestFiniteDifferenceOracle:
    def test_every_op_matches_central_differences(self):
        results = gradcheck.op_checks(seed=0)
        failing = [r.line() for r in results if not r.passed]
        assert not failing, "\n".join(failing)

    def test_oracle_catches_a_wrong_gradient(self):
        # sanity-check the checker itself: sum has gradient 1, not 2
        err = gradcheck.max_rel_err(lambda a: nd.tsum(a * 2.0), [np.ones((2, 2))])
        assert err < 1e-6
        fd = gradcheck.numerical_grad(lambda a: nd.tsum(a * 2.0), [np.ones((2, 2))], 0)
        np.testing.assert_allclose(fd, 2.0 * np.ones((2, 2)), rtol=1e-8)


class TestForwardValues:
    def test_matmul_matches_numpy(self):
        rng = np.random.default_rng(1)
        a, b = rng.standard_normal((4, 6)), rng.standard_normal((6, 3))
        out = nd.matmul(nd.Tensor(a), nd.Tensor(b))
        np.testing.assert_array_equal(out.data, a @ b)

    def test_batched_matmul_equals_loop_of_plain_matmuls(self):
        rng = np.random.default_rng(2)
        a, b = rng.standard_normal((5, 3, 4)), rng.standard_normal((4, 2))
        batched = nd.matmul(nd.Tensor(a), nd.Tensor(b)).data
        for i in range(5):
            np.testing.assert_allclose(batched[i], a[i] @ b, rtol=0, atol=0)

    def test_gelu_matches_erf_formula(self):
        # rtol limited by cancellation in 1+erf deep in the left tail
        x = np.linspace(-6, 6, 41)
        want = 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))
        got = nd.gelu(nd.Tensor(x)).data
        np.testing.assert_allclose(got, want, rtol=1e-8, atol=1e-18)

    def test_softmax_known_values(self):
        out = nd.row_softmax(nd.Tensor([[0.0, 0.0], [np.log(1.0), np.log(3.0)]])).data
        np.testing.assert_allclose(out[0], [0.5, 0.5], atol=1e-15)
        np.testing.assert_allclose(out[1], [0.25, 0.75], atol=1e-15)

    def test_layer_norm_standardizes(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((4, 8)) * 3.0 + 5.0
        out = nd.layer_norm(nd.Tensor(x), nd.Tensor(np.ones(8)), nd.Tensor(np.zeros(8))).data
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-4)

    def test_index_then_concat_round_trips(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((6, 3))
        t = nd.Tensor(x)
        back = nd.concat([t[:2], t[2:]], axis=0)
        np.testing.assert_array_equal(back.data, x)


class TestRowSoftmax:
    def test_rows_are_stochastic(self):
        rng = np.random.default_rng(5)
        out = nd.row_softmax(nd.Tensor(rng.standard_normal((7, 9)))).data
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)
        assert (out >= 0).all()

    def test_overflow_safe_for_huge_logits(self):
        out = nd.row_softmax(nd.Tensor([[1e4, 1e4 - 1.0, -1e4]])).data
        assert np.isfinite(out).all()
        np.testing.assert_allclose(out.sum(), 1.0, atol=1e-12)

    def test_masked_entries_are_exactly_zero(self):
        x = np.arange(12, dtype=np.float64).reshape(3, 4)
        mask = np.zeros((3, 4), dtype=bool)
        mask[0, 1] = mask[2, 3] = True
        out = nd.row_softmax(nd.Tensor(x), mask=mask).data
        assert out[0, 1] == 0.0 and out[2, 3] == 0.0
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)

    def test_fully_masked_row_is_all_zeros(self):
        mask = np.array([[True, True, True], [False, True, False]])
        out = nd.row_softmax(nd.Tensor(np.ones((2, 3))), mask=mask).data
        np.testing.assert_array_equal(out[0], 0.0)
        np.testing.assert_allclose(out[1], [0.5, 0.0, 0.5], atol=1e-15)

    def test_fully_masked_row_backward_is_finite_zero(self):
        t = nd.Tensor(np.ones((1, 3)), requires_grad=True)
        out = nd.row_softmax(t, mask=np.ones((1, 3), dtype=bool))
        nd.backward(nd.tsum(out))
        np.testing.assert_array_equal(t.grad, np.zeros((1, 3)))

    @given(finite_rows(3, 5))
    def test_property_rows_sum_to_one(self, x):
        out = nd.row_softmax(nd.Tensor(x)).data
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-9)


class TestRowL1Normalize:
    def test_unit_l1_norm_on_generic_rows(self):
        rng = np.random.default_rng(6)
        out = nd.row_l1_normalize(nd.Tensor(rng.standard_normal((5, 7)))).data
        np.testing.assert_allclose(np.abs(out).sum(axis=-1), 1.0, atol=1e-12)

    def test_zero_row_maps_to_zero_row(self):
        x = np.array([[0.0, 0.0, 0.0], [1.0, -1.0, 2.0]])
        out = nd.row_l1_normalize(nd.Tensor(x)).data
        np.testing.assert_array_equal(out[0], 0.0)
        np.testing.assert_allclose(np.abs(out[1]).sum(), 1.0, atol=1e-15)

    def test_zero_row_backward_uses_epsilon_branch(self):
        t = nd.Tensor(np.zeros((1, 3)), requires_grad=True)
        nd.backward(nd.tsum(nd.row_l1_normalize(t)))
        np.testing.assert_allclose(t.grad, np.full((1, 3), 1.0 / nd.L1_NORM_EPS))

    @given(finite_rows(4, 6))
    def test_property_l1_norm_at_most_one(self, x):
        out = nd.row_l1_normalize(nd.Tensor(x)).data
        assert np.isfinite(out).all()
        assert (np.abs(out).sum(axis=-1) <= 1.0 + 1e-9).all()


class TestBackwardMechanics:
    def test_reused_tensor_accumulates_gradient(self):
        x = nd.Tensor([3.0], requires_grad=True)
        nd.backward(nd.tsum(nd.mul(x, x)))
        np.testing.assert_allclose(x.grad, [6.0])

    def test_relu_gradient_at_zero_is_zero(self):
        t = nd.Tensor([-1.0, 0.0, 2.0], requires_grad=True)
        nd.backward(nd.tsum(nd.relu(t)))
        np.testing.assert_array_equal(t.grad, [0.0, 0.0, 1.0])

    def test_repeated_backward_is_bit_identical(self):
        rng = np.random.default_rng(7)
        a = nd.Tensor(rng.standard_normal((4, 4)), requires_grad=True)
        b = nd.Tensor(rng.standard_normal((4, 4)), requires_grad=True)
        loss = nd.squared_error(nd.gelu(nd.matmul(a, b)), np.ones((4, 4)))
        nd.backward(loss)
        ga, gb = a.grad.copy(), b.grad.copy()
        nd.backward(loss)
        np.testing.assert_array_equal(a.grad, ga)
        np.testing.assert_array_equal(b.grad, gb)

    def test_non_scalar_loss_raises(self):
        t = nd.Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(nd.ShapeError, match="scalar"):
            nd.backward(nd.relu(t))

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(nd.ShapeError, match=r"\(2, 3\).*\(3, 2\)"):
            nd.add(nd.Tensor(np.ones((2, 3))), nd.Tensor(np.ones((3, 2))))
        with pytest.raises(nd.ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            nd.matmul(nd.Tensor(np.ones((2, 3))), nd.Tensor(np.ones((2, 3))))

    def test_constant_subgraphs_are_pruned(self):
        c = nd.constant(np.ones((2, 2)))
        out = nd.mul(c, c)
        assert out._parents == () and not out.requires_grad

    def test_data_is_float64(self):
        assert nd.Tensor([1]).data.dtype == np.float64
        assert nd.gelu(nd.Tensor(np.ones(3, dtype=np.float32))).data.dtype == np.float64
