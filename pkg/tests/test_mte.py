import numpy as np
import pytest

from protogcn import tensor as T
from protogcn.mte import (
    MteParams,
    compose_terms,
    head_width,
    inter_topology,
    intra_topology,
    project_and_pool,
    topology_terms,
)
from protogcn.tensor import DimensionError, Tensor

import oracles
from conftest import fd_grad, rel_err


def params(channels, heads, rng, tied=False):
    return MteParams.init(channels, heads, rng, tied=tied)


class TestPooling:
    def test_single_frame_is_identity(self, rng):
        p = params(8, 2, rng)
        H = rng.normal(size=(4, 1, 8))
        q, k = project_and_pool(Tensor(H), p)
        np.testing.assert_allclose(q[0].data, H[:, 0] @ p.w_q[0].data, atol=1e-15)

    def test_constant_over_time_matches_single_frame(self, rng):
        p = params(8, 2, rng)
        frame = rng.normal(size=(4, 1, 8))
        a = topology_terms(Tensor(np.repeat(frame, 5, axis=1)), p)
        b = topology_terms(Tensor(frame), p)
        for x, y in zip(a, b):
            np.testing.assert_allclose(x.data, y.data, atol=1e-15)

    def test_against_loop_oracle(self, rng):
        p = params(8, 2, rng)
        H = rng.normal(size=(4, 3, 8))
        intra, inter = topology_terms(Tensor(H), p)
        ref_intra, ref_inter = oracles.mte_terms(H, [w.data for w in p.w_q], [w.data for w in p.w_k], 8)
        np.testing.assert_allclose(intra.data, ref_intra, atol=1e-12)
        np.testing.assert_allclose(inter.data, ref_inter, atol=1e-12)

    def test_channel_mismatch(self, rng):
        with pytest.raises(DimensionError):
            project_and_pool(Tensor(rng.normal(size=(4, 3, 6))), params(8, 2, rng))


class TestIntra:
    def test_orthogonal_rows_pre_activation(self):
        hq = np.diag([1.0, 2.0, 0.5])
        pre = (Tensor(hq) @ T.swap_last(Tensor(hq))).data
        np.testing.assert_array_equal(pre, np.diag([1.0, 4.0, 0.25]))
        out = intra_topology(Tensor(hq), Tensor(hq)).data
        np.testing.assert_allclose(out[..., 0], np.tanh(np.diag([1.0, 4.0, 0.25])))

    def test_zero_features(self):
        out = intra_topology(Tensor(np.zeros((3, 2))), Tensor(np.zeros((3, 2)))).data
        np.testing.assert_array_equal(out, 0.0)

    def test_loop_oracle(self, rng):
        hq, hk = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
        np.testing.assert_allclose(intra_topology(Tensor(hq), Tensor(hk)).data, oracles.intra(hq, hk), atol=1e-12)

    def test_broadcast_over_head_channels(self, rng):
        out = intra_topology(Tensor(rng.normal(size=(4, 3))), Tensor(rng.normal(size=(4, 3)))).data
        assert out.shape == (4, 4, 3)
        np.testing.assert_array_equal(out[..., 0], out[..., 2])

    def test_shape_mismatch(self, rng):
        with pytest.raises(DimensionError):
            intra_topology(Tensor(rng.normal(size=(3, 2))), Tensor(rng.normal(size=(4, 2))))


class TestInter:
    def test_tied_diagonal_is_zero(self, rng):
        p = params(8, 2, rng, tied=True)
        _, inter = topology_terms(Tensor(rng.normal(size=(5, 4, 8))), p)
        idx = np.arange(5)
        assert np.all(inter.data[idx, idx, :] == 0.0)

    def test_zero_keys(self, rng):
        hq = rng.normal(size=(4, 3))
        out = inter_topology(Tensor(hq), Tensor(np.zeros((4, 3)))).data
        for j in range(4):
            np.testing.assert_array_equal(out[:, j, :], np.tanh(hq))

    def test_loop_oracle(self, rng):
        hq, hk = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
        np.testing.assert_allclose(inter_topology(Tensor(hq), Tensor(hk)).data, oracles.inter(hq, hk), atol=1e-12)

    def test_relu_activation(self, rng):
        hq, hk = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
        out = inter_topology(Tensor(hq), Tensor(hk), "relu").data
        np.testing.assert_array_equal(out, np.maximum(hq[:, None] - hk[None], 0.0))


class TestCompose:
    def test_single_head_identity(self, rng):
        a, b = Tensor(rng.normal(size=(3, 3, 4))), Tensor(rng.normal(size=(3, 3, 4)))
        intra, inter = compose_terms([a], [b], 4)
        np.testing.assert_array_equal(intra.data, a.data)
        np.testing.assert_array_equal(inter.data, b.data)

    def test_two_heads_fill_channels(self, rng):
        heads = [Tensor(rng.normal(size=(3, 3, 2))) for _ in range(2)]
        intra, _ = compose_terms(heads, heads, 4)
        assert intra.shape == (3, 3, 4)
        np.testing.assert_array_equal(intra.data[..., 2:], heads[1].data)

    def test_remainder_is_zero_padded(self, rng):
        assert head_width(10, 3) == 3
        p = params(10, 3, rng)
        intra, inter = topology_terms(Tensor(rng.normal(size=(4, 2, 10))), p)
        assert intra.shape == (4, 4, 10)
        np.testing.assert_array_equal(intra.data[..., 9], 0.0)
        np.testing.assert_array_equal(inter.data[..., 9], 0.0)
        assert np.all(intra.data[..., :9] != 0.0)

    def test_head_count_mismatch(self, rng):
        a = Tensor(rng.normal(size=(3, 3, 2)))
        with pytest.raises(DimensionError):
            compose_terms([a, a], [a], 4)
        with pytest.raises(DimensionError):
            head_width(2, 3)


class TestProperties:
    def test_open_interval(self, rng):
        p = params(8, 2, rng)
        intra, inter = topology_terms(Tensor(rng.normal(scale=3, size=(5, 4, 8))), p)
        for term in (intra, inter):
            assert np.all(np.abs(term.data[..., :8]) < 1.0)

    @pytest.mark.parametrize("tied", [False, True])
    def test_joint_permutation_equivariance(self, rng, tied):
        p = params(8, 2, rng, tied=tied)
        H = rng.normal(size=(5, 3, 8))
        perm = rng.permutation(5)
        base = topology_terms(Tensor(H), p)
        moved = topology_terms(Tensor(H[perm]), p)
        for a, b in zip(base, moved):
            np.testing.assert_allclose(b.data, a.data[perm][:, perm], atol=1e-12)

    def test_gradient_through_both_terms(self, rng):
        p = params(6, 2, rng)
        H = Tensor(rng.normal(size=(4, 3, 6)), requires_grad=True)
        w1, w2 = rng.normal(size=(4, 4, 6)), rng.normal(size=(4, 4, 6))

        def loss():
            intra, inter = topology_terms(H, p)
            return T.sum_(intra * Tensor(w1) + inter * Tensor(w2))

        loss().backward()
        for t in [H] + p.w_q + p.w_k:
            numeric = fd_grad(lambda: loss().item(), t.data)
            assert rel_err(t.grad, numeric) <= 1e-6
