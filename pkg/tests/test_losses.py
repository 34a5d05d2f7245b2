import math

import numpy as np
import pytest

from protogcn import tensor as T
from protogcn.losses import (
    ClassAggregationBank,
    ProjectionHead,
    bank_update,
    cross_entropy,
    csc_loss,
    project,
    total_loss,
)
from protogcn.tensor import Tensor

from conftest import fd_grad, rel_err


class TestCrossEntropy:
    def test_uniform_logits(self):
        assert abs(cross_entropy(Tensor(np.zeros((1, 4))), [2]).item() - math.log(4)) <= 1e-12

    def test_limit_is_monotone_to_zero(self):
        values = [cross_entropy(Tensor([[big, 0.0, 0.0]]), [0]).item() for big in (0, 2, 5, 10, 40)]
        assert all(a > b for a, b in zip(values, values[1:]))
        assert values[-1] < 1e-15

    def test_gradient(self, rng):
        logits = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        y = [0, 3, 1]
        cross_entropy(logits, y).backward()
        numeric = fd_grad(lambda: cross_entropy(logits, y).item(), logits.data)
        assert rel_err(logits.grad, numeric) <= 1e-6

    def test_label_range(self):
        with pytest.raises(ValueError):
            cross_entropy(Tensor(np.zeros((1, 3))), [3])


class TestProjection:
    def test_constant_rows(self, rng):
        head = ProjectionHead.init(9, 4, rng)
        v = rng.normal(size=5)
        f = project(Tensor(np.broadcast_to(v, (9, 5)).copy()), head).data
        expected = np.full(9, v.mean()) @ head.weight.data
        np.testing.assert_allclose(f, expected / np.linalg.norm(expected), atol=1e-14)

    def test_unit_norm(self, rng):
        head = ProjectionHead.init(16, 8, rng)
        f = head(Tensor(rng.normal(scale=100, size=(7, 16, 3)))).data
        np.testing.assert_allclose(np.linalg.norm(f, axis=-1), 1.0, atol=1e-6)

    @pytest.mark.parametrize("normalize", [True, False])
    def test_gradient(self, rng, normalize):
        head = ProjectionHead.init(4, 3, rng, normalize=normalize)
        Z = Tensor(rng.normal(size=(2, 4, 5)), requires_grad=True)
        w = rng.normal(size=(2, 3))

        def loss():
            return T.sum_(head(Z) * Tensor(w))

        loss().backward()
        for t in (Z, head.weight):
            assert rel_err(t.grad, fd_grad(lambda: loss().item(), t.data)) <= 1e-6


class TestBank:
    def test_alpha_zero_takes_mean(self, rng):
        bank = ClassAggregationBank.init(3, 4, rng, alpha=0.0)
        f = rng.normal(size=(4, 4))
        bank.update(f, [1, 1, 2, 1])
        np.testing.assert_array_equal(bank.means[1], f[[0, 1, 3]].mean(axis=0))
        np.testing.assert_array_equal(bank.means[2], f[2])

    def test_absent_classes_untouched(self, rng):
        bank = ClassAggregationBank.init(3, 4, rng)
        before = bank.means.copy()
        bank.update(rng.normal(size=(2, 4)), [1, 1])
        np.testing.assert_array_equal(bank.means[[0, 2]], before[[0, 2]])

    def test_hand_unrolled_three_steps(self):
        bank = ClassAggregationBank(np.zeros((2, 3)), alpha=0.9)
        e1 = np.array([[1.0, 0.0, 0.0]])
        for _ in range(3):
            bank_update(bank, e1, [0])
        m = 0.0
        for _ in range(3):
            m = 0.9 * m + (1 - 0.9) * 1.0
        assert m == bank.means[0, 0]
        np.testing.assert_allclose(bank.means[0], [0.271, 0.0, 0.0], rtol=1e-14)

    def test_empty_batch_rejected(self, rng):
        with pytest.raises(ValueError):
            ClassAggregationBank.init(2, 3, rng).update(np.zeros((0, 3)), [])

    def test_random_init_unit_rows(self, rng):
        np.testing.assert_allclose(np.linalg.norm(ClassAggregationBank.init(5, 7, rng).means, axis=1), 1.0)

    def test_alpha_validated(self):
        with pytest.raises(ValueError):
            ClassAggregationBank(np.zeros((2, 2)), alpha=1.0)


class TestContrastive:
    def test_identical_rows_give_log_c(self, rng):
        row = rng.normal(size=5)
        bank = ClassAggregationBank(np.tile(row, (4, 1)))
        f = T.l2_normalize(Tensor(rng.normal(size=(3, 5))))
        assert abs(csc_loss(f, [0, 2, 3], bank).item() - math.log(4)) <= 1e-9

    def test_unit_vector_case(self):
        bank = ClassAggregationBank(np.eye(3))
        got = csc_loss(Tensor([[1.0, 0.0, 0.0]]), [0], bank, tau=0.125).item()
        expected = -math.log(math.exp(8) / (math.exp(8) + 2))
        assert abs(got - expected) <= 1e-14

    def test_limit_to_zero_and_non_negative(self, rng):
        bank = ClassAggregationBank(np.eye(3))
        assert csc_loss(Tensor([[1.0, 0.0, 0.0]]), [0], bank, tau=1e-3).item() < 1e-12
        for _ in range(20):
            f = T.l2_normalize(Tensor(rng.normal(size=(4, 3))))
            assert csc_loss(f, rng.integers(0, 3, 4), bank).item() >= 0.0

    @pytest.mark.parametrize("normalize", [True, False])
    def test_gradient(self, rng, normalize):
        bank = ClassAggregationBank.init(3, 4, rng)
        bank.means *= 2.0
        f = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
        y = [0, 1, 2, 2, 0]
        csc_loss(f, y, bank, normalize=normalize).backward()
        numeric = fd_grad(lambda: csc_loss(f, y, bank, normalize=normalize).item(), f.data)
        assert rel_err(f.grad, numeric) <= 1e-6

    def test_bank_carries_no_gradient(self, rng):
        bank = ClassAggregationBank.init(3, 4, rng)
        f = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
        loss = csc_loss(f, [0, 1], bank)
        assert isinstance(bank.means, np.ndarray)
        loss.backward()
        leaves = [t for t in T.topological_order(loss) if t.node is None]
        assert leaves == [f]

    def test_bank_perturbation_leaves_ce_gradient(self, rng):
        logits = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        grads = []
        for scale in (1.0, 5.0):
            bank = ClassAggregationBank(scale * np.eye(3))
            logits.grad = None
            ce = cross_entropy(logits, [0, 1])
            total_loss(ce, csc_loss(T.l2_normalize(logits), [0, 1], bank), 0.0).backward()
            grads.append(logits.grad.copy())
        np.testing.assert_array_equal(grads[0], grads[1])

    def test_tau_validated(self):
        with pytest.raises(ValueError):
            csc_loss(Tensor([[1.0, 0.0]]), [0], ClassAggregationBank(np.eye(2)), tau=0.0)


class TestTotal:
    def test_zero_weight_bit_equals_ce(self, rng):
        ce = cross_entropy(Tensor(rng.normal(size=(3, 4))), [0, 1, 2])
        csc = Tensor(rng.uniform(0, 3))
        assert total_loss(ce, csc, 0.0).item() == ce.item()

    def test_default_weight(self):
        assert total_loss(Tensor(1.0), Tensor(2.0), 0.3).item() == pytest.approx(1.6, abs=1e-15)

    def test_linearity(self, rng):
        a, b, l1, l2 = rng.uniform(size=4)
        lhs = total_loss(Tensor(a), Tensor(b), l1).item() + total_loss(Tensor(0.0), Tensor(b), l2).item()
        assert lhs == pytest.approx(a + (l1 + l2) * b, rel=1e-14)

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            total_loss(Tensor(1.0), Tensor(1.0), -0.1)
