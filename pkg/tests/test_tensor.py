"""Tensor engine: forward values, gradients vs finite differences, tape replay."""

import numpy as np
import pytest

from stochcon.exceptions import ContractError, DimensionError, DomainError
from stochcon.gradcheck import check_gradients, finite_difference_gradient, max_relative_error
from stochcon.tensor import (
    Tensor,
    concat_rows,
    l2_normalize,
    log_sum_exp,
    repeat_cols,
    repeat_rows,
    replay,
    take_elements,
)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class TestForward:
    def test_matmul_hand_arithmetic(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor([[1.0], [1.0]])
        assert np.array_equal((a @ b).data, [[3.0], [7.0]])

    def test_matmul_identity(self, rng):
        a = Tensor(rng.normal(size=(3, 3)))
        eye = Tensor(np.eye(3))
        assert np.array_equal((a @ eye).data, a.data)

    def test_matmul_shape_mismatch(self):
        with pytest.raises(DimensionError):
            Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((2, 3)))

    def test_sigmoid_zero(self):
        assert Tensor([0.0]).sigmoid().data[0] == 0.5

    def test_relu_negative(self):
        x = Tensor([-3.0], requires_grad=True)
        y = x.relu()
        assert y.data[0] == 0.0
        y.sum().backward()
        assert x.grad[0] == 0.0

    def test_log_domain(self):
        with pytest.raises(DomainError):
            Tensor([0.0]).log()

    def test_mean(self):
        assert Tensor([1.0, 2.0, 3.0]).mean().item() == 2.0

    def test_no_general_broadcasting(self):
        with pytest.raises(DimensionError):
            Tensor(np.zeros((2, 3))) + Tensor(np.zeros(3))

    def test_scalar_broadcast_allowed(self):
        out = Tensor(np.ones((2, 2))) * 3.0
        assert np.array_equal(out.data, np.full((2, 2), 3.0))

    def test_max_tie_break_lowest_index(self):
        x = Tensor([2.0, 5.0, 5.0], requires_grad=True)
        y = x.max()
        assert y.item() == 5.0
        y.backward()
        assert np.array_equal(x.grad, [0.0, 1.0, 0.0])

    def test_l2_normalize_345(self):
        assert np.allclose(l2_normalize(Tensor([3.0, 4.0])).data, [0.6, 0.8])

    def test_l2_normalize_zero_guard(self):
        out = l2_normalize(Tensor([0.0, 0.0]), eps=1e-12)
        assert np.array_equal(out.data, [0.0, 0.0])

    def test_log_sum_exp_values(self):
        assert log_sum_exp(Tensor([0.0, 0.0])).item() == np.log(2.0)
        stable = log_sum_exp(Tensor([1000.0, 1000.0])).item()
        assert stable == 1000.0 + np.log(2.0)

    def test_log_sum_exp_matches_naive(self, rng):
        x = rng.normal(size=10)
        naive = np.log(np.sum(np.exp(x)))
        assert abs(log_sum_exp(Tensor(x)).item() - naive) < 1e-12

    def test_determinism(self, rng):
        x = rng.normal(size=(4, 5))
        w = rng.normal(size=(5, 3))

        def run():
            return ((Tensor(x) @ Tensor(w)).relu().sum()).item()

        assert run() == run()


class TestBackward:
    def test_sum_of_squares(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        (x * x).sum().backward()
        assert np.array_equal(x.grad, [2.0, 4.0, 6.0])

    def test_loss_independent_of_leaf(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = Tensor([3.0, 4.0], requires_grad=True)
        (y * y).sum().backward()
        assert x.grad is None

    def test_backward_non_scalar_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            (x * x).backward()

    def test_repeated_backward_accumulates(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        loss = (x * x).sum()
        loss.backward()
        loss.backward()
        assert np.array_equal(x.grad, [4.0, 8.0])

    def test_sum_backward_distributes_ones(self):
        x = Tensor(np.arange(6, dtype=float).reshape(2, 3), requires_grad=True)
        x.sum().backward()
        assert np.array_equal(x.grad, np.ones((2, 3)))

    def test_diamond_graph_accumulates(self):
        x = Tensor([2.0], requires_grad=True)
        y = x * 3.0
        (y * y + y).sum().backward()
        # d/dx (9x^2 + 3x) = 18x + 3
        assert np.allclose(x.grad, [39.0])

    def test_matmul_grad_vs_finite_differences(self, rng):
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        check_gradients(lambda: (a @ b).sum(), [a, b], rtol=1e-6)

    def test_exp_grad_at_one(self):
        x = Tensor([1.0], requires_grad=True)
        fd = finite_difference_gradient(lambda: x.exp().sum(), x)
        x.exp().sum().backward()
        assert max_relative_error(x.grad, fd) < 1e-6

    def test_l2_normalize_grad(self, rng):
        x = Tensor(rng.normal(size=7), requires_grad=True)
        w = rng.normal(size=7)
        check_gradients(lambda: (l2_normalize(x) * Tensor(w)).sum(), [x], rtol=1e-5)


OPS = {
    "add": lambda t, aux: (t + Tensor(aux)).sum(),
    "sub": lambda t, aux: (t - Tensor(aux)).sum(),
    "mul": lambda t, aux: (t * Tensor(aux)).sum(),
    "neg": lambda t, aux: (-t * Tensor(aux)).sum(),
    "scale": lambda t, aux: (t.scale(1.7) * Tensor(aux)).sum(),
    "exp": lambda t, aux: (t.exp() * Tensor(aux)).sum(),
    "sigmoid": lambda t, aux: (t.sigmoid() * Tensor(aux)).sum(),
    "matmul": lambda t, aux: (t @ Tensor(aux.T)).sum(),
    "transpose": lambda t, aux: (t.transpose() * Tensor(aux.T)).sum(),
    "reshape": lambda t, aux: (t.reshape((aux.size,)) * Tensor(aux.reshape(-1))).sum(),
    "sum0": lambda t, aux: (t.sum(axis=0) * Tensor(aux[0])).sum(),
    "mean1": lambda t, aux: (t.mean(axis=1) * Tensor(aux[:, 0])).sum(),
    "lse1": lambda t, aux: (log_sum_exp(t, axis=1) * Tensor(aux[:, 0])).sum(),
    "clip": lambda t, aux: (t.clip(-0.5, 0.5) * Tensor(aux)).sum(),
    "slice_cols": lambda t, aux: (t.slice_cols(1, 3) * Tensor(aux[:, 1:3])).sum(),
    "take_rows": lambda t, aux: (t.take_rows([2, 0, 2]) * Tensor(aux[[2, 0, 2]])).sum(),
    "take_elements": lambda t, aux: (
        take_elements(t, [0, 1, 2], [3, 0, 2]) * Tensor(aux[[0, 1, 2], [3, 0, 2]])
    ).sum(),
    "repeat_rows": lambda t, aux: (repeat_rows(t.sum(axis=0), 3) * Tensor(aux[:3])).sum(),
    "repeat_cols": lambda t, aux: (repeat_cols(t.sum(axis=1), 4) * Tensor(aux[:, :4])).sum(),
    "l2norm_rows": lambda t, aux: (l2_normalize(t) * Tensor(aux)).sum(),
    "concat": lambda t, aux: (
        concat_rows([t, t * 2.0]) * Tensor(np.vstack([aux, aux]))
    ).sum(),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients_match_finite_differences(name):
    # 5 randomized instances per op, away from relu/max kinks by construction
    rng = np.random.default_rng(hash(name) % (2**32))
    for _ in range(5):
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        aux = rng.normal(size=(3, 4))
        check_gradients(lambda: OPS[name](x, aux), [x], rtol=1e-4)


def test_relu_gradient_away_from_kink(rng):
    x = Tensor(rng.normal(size=(3, 4)) + np.sign(rng.normal(size=(3, 4))) * 0.5, requires_grad=True)
    aux = rng.normal(size=(3, 4))
    check_gradients(lambda: (x.relu() * Tensor(aux)).sum(), [x], rtol=1e-4)


def test_max_axis_gradient(rng):
    x = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    w = rng.normal(size=4)
    check_gradients(lambda: (x.max(axis=1) * Tensor(w)).sum(), [x], rtol=1e-4)


class TestReplay:
    def test_replay_after_parameter_mutation(self, rng):
        w = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        x = Tensor(rng.normal(size=(2, 3)))
        out = ((x @ w).relu()).sum()
        w.data[:] = rng.normal(size=(3, 3))
        replay(out)
        fresh = ((x @ w).relu()).sum()
        assert out.item() == fresh.item()

    def test_replay_visits_each_node_once(self):
        x = Tensor([1.0], requires_grad=True)
        y = x * 2.0
        z = y + y
        order = z._topo()
        assert len(order) == len({id(n) for n in order})
