import numpy as np
import pytest

from protogcn import tensor as T
from protogcn.tensor import DimensionError, NumericError, Tensor

from conftest import fd_grad, rel_err


def leaf(arr):
    return Tensor(np.array(arr, dtype=np.float64), requires_grad=True)


def check_grad(build, arrays, tol=1e-6, eps=1e-6):
    """Backprop vs central differences for a scalar ``build(*tensors)``."""
    tensors = [leaf(a) for a in arrays]
    build(*tensors).backward()
    for t in tensors:
        numeric = fd_grad(lambda: build(*tensors).item(), t.data, eps)
        assert rel_err(t.grad, numeric) <= tol


class TestMatmul:
    def test_identity(self):
        b = np.array([[1.5, -2.0], [0.25, 4.0]])
        np.testing.assert_array_equal((Tensor(np.eye(2)) @ Tensor(b)).data, b)

    def test_small_product(self):
        assert (Tensor([[1.0, 2.0]]) @ Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]

    def test_gradient_of_sum(self, rng):
        check_grad(lambda a, b: T.sum_(a @ b), [rng.normal(size=(4, 5)), rng.normal(size=(5, 3))])

    def test_batched_against_shared(self, rng):
        check_grad(lambda a, b: T.sum_(T.tanh(a @ b)), [rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 2))])

    def test_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
            Tensor(np.ones((2, 3))) @ Tensor(np.ones((4, 5)))


class TestSoftmax:
    def test_uniform_row(self):
        np.testing.assert_allclose(T.softmax_rows(Tensor(np.zeros((1, 3)))).data, [[1 / 3] * 3], atol=1e-15)

    def test_saturates(self):
        out = T.softmax_rows(Tensor([[800.0, -800.0]])).data
        np.testing.assert_allclose(out, [[1.0, 0.0]], atol=1e-12)

    def test_jacobian(self, rng):
        w = rng.normal(size=(3, 4))
        check_grad(lambda x: T.sum_(T.softmax_rows(x) * Tensor(w)), [rng.normal(size=(3, 4))], tol=1e-5)

    def test_rows_are_distributions(self, rng):
        out = T.softmax_rows(Tensor(rng.normal(scale=20, size=(50, 7)))).data
        assert np.all(out >= 0)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_non_finite_rejected(self, bad):
        with pytest.raises(NumericError):
            T.softmax_rows(Tensor([[0.0, bad]]))

    def test_log_softmax_matches_log_of_softmax(self, rng):
        x = rng.normal(size=(4, 6))
        np.testing.assert_allclose(T.log_softmax(Tensor(x)).data, np.log(T.softmax(Tensor(x)).data), atol=1e-13)
        w = rng.normal(size=(4, 6))
        check_grad(lambda t: T.sum_(T.log_softmax(t) * Tensor(w)), [x])

    def test_softmax_rows_requires_matrix(self):
        with pytest.raises(DimensionError):
            T.softmax_rows(Tensor(np.zeros(3)))


class TestElementwise:
    def test_relu_values(self):
        np.testing.assert_array_equal(T.relu(Tensor([-2.0, 3.0])).data, [0.0, 3.0])

    def test_relu_subgradient_at_zero(self):
        x = leaf([0.0, 1.0])
        T.sum_(T.relu(x)).backward()
        np.testing.assert_array_equal(x.grad, [0.0, 1.0])

    def test_tanh_zero(self):
        assert T.tanh(Tensor(0.0)).item() == 0.0

    def test_tanh_gradient_at_half(self):
        check_grad(lambda x: T.sum_(T.tanh(x)), [np.array([0.5])])
        x = leaf([0.5])
        T.sum_(T.tanh(x)).backward()
        np.testing.assert_allclose(x.grad, 1 - np.tanh(0.5) ** 2, rtol=1e-15)

    def test_broadcast_add_sub_mul_scale(self, rng):
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4,))
        check_grad(lambda x, y: T.sum_(T.scale(x * y - (x + y), 0.7) * x), [a, b])

    def test_broadcast_mismatch(self):
        with pytest.raises(DimensionError):
            Tensor(np.ones((2, 3))) + Tensor(np.ones((4,)))

    def test_unbroadcast_keepdims_axis(self):
        g = np.ones((2, 3, 4))
        assert T.unbroadcast(g, (3, 1)).shape == (3, 1)
        np.testing.assert_array_equal(T.unbroadcast(g, (3, 1)), np.full((3, 1), 8.0))


class TestReductions:
    def test_mean_axis(self):
        np.testing.assert_array_equal(T.mean(Tensor([[1.0, 3.0], [2.0, 4.0]]), axis=1).data, [2.0, 3.0])

    def test_mean_of_constant(self):
        assert T.mean(Tensor(np.full((3, 4, 2), 2.5))).item() == 2.5

    def test_mean_gradient(self, rng):
        w = rng.normal(size=(2, 4))
        check_grad(lambda x: T.sum_(T.mean(x, axis=1) * Tensor(w)), [rng.normal(size=(2, 3, 4))])

    def test_mean_tuple_axes(self, rng):
        w = rng.normal(size=(3,))
        check_grad(lambda x: T.sum_(T.mean(x, axis=(0, 2)) * Tensor(w)), [rng.normal(size=(2, 3, 4))])


class TestShapeOps:
    def test_reshape_transpose_concat_pad(self, rng):
        a, b = rng.normal(size=(2, 3, 2)), rng.normal(size=(2, 3, 1))
        w = rng.normal(size=(3, 2, 5))

        def build(x, y):
            cat = T.pad_last(T.concat([x, y], axis=-1), 5)
            return T.sum_(T.transpose(cat, (1, 0, 2)) * Tensor(w))

        check_grad(build, [a, b])

    def test_pad_last_appends_zeros(self):
        out = T.pad_last(Tensor(np.ones((2, 3))), 5).data
        np.testing.assert_array_equal(out[:, 3:], 0.0)

    def test_expand_gradient_sums(self, rng):
        check_grad(lambda x: T.sum_(T.tanh(T.expand(x, (3, 2, 4)))), [rng.normal(size=(2, 4))])

    def test_pick(self):
        x = leaf([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        out = T.pick(x, [2, 0])
        np.testing.assert_array_equal(out.data, [3.0, 4.0])
        T.sum_(out).backward()
        np.testing.assert_array_equal(x.grad, [[0, 0, 1], [1, 0, 0]])


class TestNormalisation:
    def test_l2_unit_norm_and_grad(self, rng):
        x = rng.normal(size=(3, 5))
        np.testing.assert_allclose(np.linalg.norm(T.l2_normalize(Tensor(x)).data, axis=1), 1.0, atol=1e-14)
        w = rng.normal(size=(3, 5))
        check_grad(lambda t: T.sum_(T.l2_normalize(t) * Tensor(w)), [x])

    def test_layer_norm_grad(self, rng):
        x = rng.normal(size=(2, 3, 6))
        y = T.layer_norm(Tensor(x)).data
        np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-14)
        w = rng.normal(size=(2, 3, 6))
        check_grad(lambda t: T.sum_(T.layer_norm(t) * Tensor(w)), [x], tol=1e-6)


class TestGraphOps:
    def test_identity_adjacency(self, rng):
        feat = rng.normal(size=(4, 3, 2))
        adj = np.repeat(np.eye(4)[:, :, None], 2, axis=2)
        np.testing.assert_array_equal(T.graph_apply(Tensor(adj), Tensor(feat)).data, feat)

    def test_all_ones_constant(self):
        v = np.array([1.5, -2.0])
        feat = np.broadcast_to(v, (3, 4, 2)).copy()
        out = T.graph_apply(Tensor(np.ones((3, 3, 2))), Tensor(feat)).data
        np.testing.assert_allclose(out, np.broadcast_to(3 * v, (3, 4, 2)))

    def test_gradient_shared_adjacency(self, rng):
        w = rng.normal(size=(2, 3, 4, 2))
        check_grad(
            lambda a, h: T.sum_(T.graph_apply(a, h) * Tensor(w)),
            [rng.normal(size=(3, 3, 2)), rng.normal(size=(2, 3, 4, 2))],
        )

    def test_temporal_conv_delta_kernel(self, rng):
        x = rng.normal(size=(3, 5, 2))
        w = np.zeros((3, 2))
        w[1] = 1.0
        np.testing.assert_array_equal(T.temporal_conv(Tensor(x), Tensor(w)).data, x)

    def test_temporal_conv_gradient(self, rng):
        g = rng.normal(size=(2, 3, 6, 2))
        check_grad(
            lambda x, w: T.sum_(T.temporal_conv(x, w) * Tensor(g)),
            [rng.normal(size=(2, 3, 6, 2)), rng.normal(size=(5, 2))],
        )

    def test_even_kernel_rejected(self):
        with pytest.raises(DimensionError):
            T.temporal_conv(Tensor(np.ones((2, 3, 1))), Tensor(np.ones((2, 1))))


class TestTape:
    def test_shared_subexpression_visited_once(self):
        x = leaf([2.0])
        y = x * x
        (y + y).backward()
        np.testing.assert_array_equal(x.grad, [8.0])

    def test_topological_order(self):
        x = leaf([1.0])
        a = T.tanh(x)
        b = a * x
        order = T.topological_order(b)
        pos = {id(t): i for i, t in enumerate(order)}
        for t in order:
            if t.node:
                assert all(pos[id(p)] < pos[id(t)] for p in t.node.parents if p.requires_grad)

    def test_every_leaf_gets_grad(self, rng):
        a, b = leaf(rng.normal(size=3)), leaf(rng.normal(size=3))
        T.sum_(a * 0.0 + b).backward()
        assert a.grad is not None and a.grad.shape == a.shape

    def test_no_grad_records_nothing(self):
        x = leaf([1.0])
        with T.no_grad():
            y = x * x
        assert y.node is None and not y.requires_grad

    def test_backward_needs_scalar(self):
        with pytest.raises(DimensionError):
            (leaf([1.0, 2.0]) * 2.0).backward()

    def test_backward_deterministic(self, rng):
        data = rng.normal(size=(4, 5))
        grads = []
        for _ in range(2):
            x = leaf(data)
            T.sum_(T.tanh(x @ Tensor(data.T))).backward()
            grads.append(x.grad)
        np.testing.assert_array_equal(grads[0], grads[1])
