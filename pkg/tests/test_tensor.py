import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from momenthd import tensor as T
from momenthd.errors import ConfigError, ContractError, ShapeError
from momenthd.tensor import Tape, Tensor

from conftest import analytic_grad, central_difference, max_rel_err


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = T.matmul(Tensor(np.eye(2)), Tensor(a))
        np.testing.assert_array_equal(out.data, a)

    def test_hand_value(self):
        out = T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert out.data.tolist() == [[11.0]]

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_gradient_matches_finite_differences(self, rng):
        a = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        for t in (a, b):
            got = analytic_grad(lambda: T.tsum(T.matmul(a, b)), t)
            want = central_difference(lambda: float(np.sum(a.data @ b.data)), t.data)
            assert max_rel_err(got, want) <= 1e-6

    def test_batched_gradient(self, rng):
        a = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(2, 4, 5)), requires_grad=True)
        got = analytic_grad(lambda: T.tsum(T.matmul(a, b)), a)
        want = central_difference(lambda: float(np.sum(np.matmul(a.data, b.data))), a.data)
        assert max_rel_err(got, want) <= 1e-6


class TestSoftmax:
    def test_symmetry(self):
        out = T.softmax(Tensor([0.0, 0.0]))
        np.testing.assert_allclose(out.data, [0.5, 0.5])

    def test_no_overflow(self):
        out = T.softmax(Tensor([1000.0, 0.0]))
        assert np.isfinite(out.data).all()
        np.testing.assert_allclose(out.data, [1.0, 0.0], atol=1e-300)

    def test_hand_value(self):
        out = T.softmax(Tensor([math.log(1), math.log(2), math.log(3)]))
        np.testing.assert_allclose(out.data, [1 / 6, 2 / 6, 3 / 6], atol=1e-12)

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=8))
    @settings(max_examples=50, deadline=None)
    def test_rows_sum_to_one(self, values):
        out = T.softmax(Tensor(values))
        assert abs(out.data.sum() - 1.0) <= 1e-12
        assert (out.data > 0).all()

    def test_gradient(self, rng):
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        w = rng.normal(size=(3, 4))
        got = analytic_grad(lambda: T.tsum(T.softmax(x, axis=-1) * Tensor(w)), x)

        def f():
            e = np.exp(x.data - x.data.max(axis=-1, keepdims=True))
            return float(((e / e.sum(axis=-1, keepdims=True)) * w).sum())

        want = central_difference(f, x.data)
        assert max_rel_err(got, want) <= 1e-5


class TestLayerNorm:
    def test_constant_row_is_zeroed(self):
        x = Tensor(np.full((2, 4), 3.7))
        out = T.layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-12)

    def test_two_point_row(self):
        out = T.layer_norm(Tensor([[1.0, 3.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12)
        np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-5)

    def test_rejects_nonpositive_eps(self):
        with pytest.raises(ConfigError):
            T.layer_norm(Tensor([[1.0, 2.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0)

    def test_gradients_vs_finite_differences(self, rng):
        x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
        gamma = Tensor(rng.normal(size=5), requires_grad=True)
        beta = Tensor(rng.normal(size=5), requires_grad=True)
        w = rng.normal(size=(3, 5))

        def f():
            mu = x.data.mean(axis=-1, keepdims=True)
            var = x.data.var(axis=-1, keepdims=True)
            y = gamma.data * (x.data - mu) / np.sqrt(var + 1e-5) + beta.data
            return float((y * w).sum())

        for t in (x, gamma, beta):
            got = analytic_grad(
                lambda: T.tsum(T.layer_norm(x, gamma, beta) * Tensor(w)), t
            )
            want = central_difference(f, t.data)
            assert max_rel_err(got, want) <= 1e-5


class TestAvgPool1d:
    def test_single_token_identity(self, rng):
        x = rng.normal(size=(1, 3))
        out = T.avg_pool_1d(Tensor(x), 3)
        np.testing.assert_array_equal(out.data, x)

    def test_edge_count_normalization(self):
        out = T.avg_pool_1d(Tensor([[1.0], [2.0], [3.0]]), 3)
        np.testing.assert_allclose(out.data[:, 0], [1.5, 2.0, 2.5])

    def test_even_window_rejected(self):
        with pytest.raises(ConfigError):
            T.avg_pool_1d(Tensor(np.zeros((4, 2))), 2)

    def test_preserves_length(self, rng):
        for length in (1, 5, 75):
            x = rng.normal(size=(length, 4))
            assert T.avg_pool_1d(Tensor(x), 3).shape == (length, 4)

    @given(st.floats(-10, 10))
    @settings(max_examples=25, deadline=None)
    def test_linearity(self, alpha):
        x = np.linspace(-1, 1, 18).reshape(6, 3)
        lhs = T.avg_pool_1d(Tensor(alpha * x), 3).data
        rhs = alpha * T.avg_pool_1d(Tensor(x), 3).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_mask_excludes_padding(self, rng):
        x = rng.normal(size=(5, 2))
        mask = np.array([True, True, True, False, False])
        padded = T.avg_pool_1d(Tensor(x), 3, mask=mask).data[:3]
        bare = T.avg_pool_1d(Tensor(x[:3]), 3).data
        np.testing.assert_allclose(padded, bare, atol=0)

    def test_gradient(self, rng):
        x = Tensor(rng.normal(size=(6, 3)), requires_grad=True)
        w = rng.normal(size=(6, 3))
        got = analytic_grad(lambda: T.tsum(T.avg_pool_1d(x, 3) * Tensor(w)), x)

        def f():
            return float((T.avg_pool_1d(Tensor(x.data), 3).data * w).sum())

        want = central_difference(f, x.data)
        assert max_rel_err(got, want) <= 1e-6


class TestElementwise:
    def test_sigmoid_at_zero(self):
        assert T.sigmoid(Tensor(0.0)).item() == 0.5

    def test_sigmoid_tails_stable(self):
        assert T.sigmoid(Tensor(-1000.0)).item() == 0.0
        assert T.sigmoid(Tensor(1000.0)).item() == 1.0

    def test_relu_negative(self):
        assert T.relu(Tensor(-2.0)).item() == 0.0

    def test_softplus_hand_value(self):
        assert abs(T.softplus(Tensor(0.0)).item() - math.log(2)) < 1e-15
        assert abs(T.softplus(Tensor(-800.0)).item()) < 1e-15

    def test_dropout_eval_is_identity(self, rng):
        x = Tensor(rng.normal(size=(4, 4)))
        out = T.dropout(x, 0.5, rng, training=False)
        assert out is x

    def test_dropout_scales_survivors(self, rng):
        x = Tensor(np.ones((100, 100)))
        out = T.dropout(x, 0.25, rng, training=True)
        survivors = out.data[out.data != 0]
        np.testing.assert_allclose(survivors, 1 / 0.75)

    def test_dropout_invalid_rate(self, rng):
        with pytest.raises(ConfigError):
            T.dropout(Tensor([1.0]), 1.0, rng, training=True)

    def test_drop_path_zeroes_whole_branch(self):
        rng = np.random.default_rng(0)
        x = Tensor(np.ones((3, 2)))
        outs = [T.drop_path(x, 0.5, rng, training=True).data for _ in range(20)]
        for o in outs:
            assert (o == 0).all() or np.allclose(o, 2.0)
        assert any((o == 0).all() for o in outs)

    def test_elementwise_gradients(self, rng):
        for op, ref in [
            (T.relu, lambda v: np.maximum(v, 0)),
            (T.sigmoid, lambda v: 1 / (1 + np.exp(-v))),
            (T.softplus, lambda v: np.log1p(np.exp(v))),
            (T.exp, np.exp),
            (T.absolute, np.abs),
        ]:
            x = Tensor(rng.normal(size=(3, 3)) + 0.1, requires_grad=True)
            got = analytic_grad(lambda: T.tsum(op(x)), x)
            want = central_difference(lambda: float(ref(x.data).sum()), x.data)
            assert max_rel_err(got, want, floor=1e-4) <= 1e-5, op.__name__

    def test_log_gradient(self, rng):
        x = Tensor(rng.uniform(0.5, 2.0, size=(3, 3)), requires_grad=True)
        got = analytic_grad(lambda: T.tsum(T.log(x)), x)
        np.testing.assert_allclose(got, 1 / x.data, atol=1e-12)

    def test_min_max_gradients_pick_winner(self):
        a = Tensor(np.array([1.0, 5.0]), requires_grad=True)
        b = Tensor(np.array([2.0, 3.0]), requires_grad=True)
        ga = analytic_grad(lambda: T.tsum(T.maximum(a, b)), a)
        np.testing.assert_array_equal(ga, [0.0, 1.0])
        gb = analytic_grad(lambda: T.tsum(T.minimum(a, b)), b)
        np.testing.assert_array_equal(gb, [0.0, 1.0])


class TestTakeConcatReshape:
    def test_take_accumulates_duplicates(self):
        x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
        idx = np.array([0, 0, 2])
        g = analytic_grad(lambda: T.tsum(x[idx]), x)
        np.testing.assert_array_equal(g, [2.0, 0.0, 1.0])

    def test_concat_roundtrip_gradient(self, rng):
        a = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        w = rng.normal(size=(6, 3))
        got = analytic_grad(lambda: T.tsum(T.concat([a, b], axis=0) * Tensor(w)), a)
        np.testing.assert_allclose(got, w[:2], atol=1e-12)

    def test_transpose_reshape_gradients(self, rng):
        x = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
        w = rng.normal(size=(3, 2, 4))
        got = analytic_grad(lambda: T.tsum(T.transpose(x, (1, 0, 2)) * Tensor(w)), x)
        np.testing.assert_allclose(got, w.transpose(1, 0, 2), atol=1e-12)


class TestBackwardContract:
    def test_sum_gradient_is_ones(self, rng):
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        g = analytic_grad(lambda: T.tsum(x), x)
        np.testing.assert_array_equal(g, np.ones((3, 4)))

    def test_quadratic_gradient(self, rng):
        x = Tensor(rng.normal(size=(5,)), requires_grad=True)
        g = analytic_grad(lambda: T.tsum(x * x), x)
        np.testing.assert_allclose(g, 2 * x.data, atol=1e-12)

    def test_backward_rejects_nonscalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            y = x * 2.0
        with pytest.raises(ContractError):
            tape.backward(y)

    def test_backward_twice_is_an_error(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            y = T.tsum(x * 2.0)
        tape.backward(y)
        with pytest.raises(ContractError):
            tape.backward(y)

    def test_fresh_tape_reproduces_gradients(self, rng):
        x = Tensor(rng.normal(size=(4, 4)), requires_grad=True)

        def build():
            return T.tsum(T.softmax(T.matmul(x, x), axis=-1) * Tensor(np.eye(4)))

        g1 = analytic_grad(build, x)
        g2 = analytic_grad(build, x)
        np.testing.assert_array_equal(g1, g2)

    def test_composite_graph_vs_finite_differences(self, rng):
        # layered graph touching most primitives at once
        x = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
        w = Tensor(rng.normal(size=(6, 6)), requires_grad=True)
        gamma = Tensor(np.ones(6), requires_grad=True)
        beta = Tensor(np.zeros(6), requires_grad=True)

        def build():
            h = T.relu(T.matmul(x, w))
            h = T.layer_norm(h + x, gamma, beta)
            h = T.avg_pool_1d(h, 3)
            return T.tsum(T.softmax(h, axis=-1) * T.sigmoid(h))

        def f():
            with Tape():
                pass
            return build().item()

        for seed_t in (x, w, gamma, beta):
            got = analytic_grad(build, seed_t)
            want = central_difference(f, seed_t.data)
            assert max_rel_err(got, want, floor=1e-5) <= 1e-4
