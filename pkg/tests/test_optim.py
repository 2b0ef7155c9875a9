"""Optimizers: closed-form step checks, convergence, schedules, state round-trip."""

import numpy as np
import pytest

from stochcon.exceptions import ParameterError
from stochcon.optim import LARS, Adam, LRSchedule, SGDMomentum, lr_at, make_optimizer
from stochcon.tensor import Tensor


def quadratic_params(rng, dim=6):
    target = rng.normal(size=dim)
    x = Tensor(target + rng.normal(size=dim), requires_grad=True)
    return x, target


def set_grad(p, grad):
    p.grad = np.asarray(grad, dtype=np.float64).copy()


class TestSGDMomentum:
    def test_first_step_is_minus_lr_grad(self):
        p = Tensor(np.zeros(3), requires_grad=True)
        opt = SGDMomentum({"p": p}, lr=0.1, momentum=0.9)
        set_grad(p, [1.0, -2.0, 0.5])
        opt.step()
        assert np.allclose(p.data, [-0.1, 0.2, -0.05])

    def test_zero_grad_leaves_params_fixed(self):
        p = Tensor([1.0, 2.0], requires_grad=True)
        opt = SGDMomentum({"p": p}, lr=0.1)
        for _ in range(5):
            set_grad(p, [0.0, 0.0])
            opt.step()
        assert np.array_equal(p.data, [1.0, 2.0])

    def test_two_steps_constant_grad_unrolls(self):
        # after two steps with constant grad g: delta = -lr*g*(2 + momentum)
        p = Tensor([0.0], requires_grad=True)
        opt = SGDMomentum({"p": p}, lr=0.1, momentum=0.9)
        for _ in range(2):
            set_grad(p, [1.0])
            opt.step()
        assert np.allclose(p.data, [-0.1 * (2.0 + 0.9)])


class TestLARS:
    def test_equal_norms_unit_trust_ratio(self):
        rng = np.random.default_rng(0)
        w = rng.normal(size=(4, 4))
        p = Tensor(w.copy(), requires_grad=True)
        opt = LARS({"p": p}, lr=1.0, momentum=0.0, weight_decay=0.0, trust_coeff=1.0)
        set_grad(p, w)  # same norm as the weights
        opt.step()
        # local_lr = 1 up to eps, so the update is just -lr*grad
        assert np.allclose(p.data, w - w, atol=1e-6)

    def test_zero_grad_zero_decay_fixed(self):
        p = Tensor(np.ones((3, 3)), requires_grad=True)
        opt = LARS({"p": p}, lr=0.5, weight_decay=0.0)
        set_grad(p, np.zeros((3, 3)))
        opt.step()
        assert np.array_equal(p.data, np.ones((3, 3)))

    def test_trust_ratio_scale_invariant(self):
        rng = np.random.default_rng(1)
        w = rng.normal(size=(5, 5))
        g = rng.normal(size=(5, 5))

        def first_update(scale):
            p = Tensor(scale * w, requires_grad=True)
            opt = LARS({"p": p}, lr=1.0, momentum=0.0, weight_decay=0.0, trust_coeff=0.001)
            set_grad(p, scale * g)
            opt.step()
            return (scale * w - p.data) / scale

        assert np.allclose(first_update(1.0), first_update(2.0), rtol=1e-9)

    def test_bias_bypasses_trust_ratio(self):
        p = Tensor(np.ones(4), requires_grad=True)
        opt = LARS({"p": p}, lr=0.1, momentum=0.0, weight_decay=0.5, trust_coeff=0.001)
        set_grad(p, np.ones(4))
        opt.step()
        # plain SGD on 1-d params: no decay, no scaling
        assert np.allclose(p.data, np.ones(4) - 0.1)


class TestAdam:
    def test_first_step_magnitude(self):
        p = Tensor([0.0, 0.0], requires_grad=True)
        opt = Adam({"p": p}, lr=3e-4)
        set_grad(p, [5.0, -0.01])
        opt.step()
        assert np.all(np.abs(np.abs(p.data) - 3e-4) < 3e-4 * 1e-3)
        assert p.data[0] < 0 < p.data[1]

    def test_zero_grad_fixed(self):
        p = Tensor([1.0], requires_grad=True)
        opt = Adam({"p": p})
        for _ in range(3):
            set_grad(p, [0.0])
            opt.step()
        assert np.array_equal(p.data, [1.0])

    def test_long_run_invariant_to_grad_scale(self):
        def run(scale):
            p = Tensor([0.0], requires_grad=True)
            opt = Adam({"p": p}, lr=1e-3)
            for _ in range(2000):
                set_grad(p, [scale])
                opt.step()
            return p.data[0]

        a, b = run(1.0), run(100.0)
        assert abs(a - b) / abs(a) < 1e-3


@pytest.mark.parametrize("cls", [SGDMomentum, LARS, Adam], ids=["sgd", "lars", "adam"])
def test_converges_on_convex_quadratic_at_defaults(cls):
    rng = np.random.default_rng(12)
    target = rng.normal(size=(4, 3))
    p = Tensor(target + rng.normal(size=(4, 3)), requires_grad=True)
    opt = cls({"p": p})
    for _ in range(10_000):
        set_grad(p, p.data - target)
        opt.step()
        if np.linalg.norm(p.data - target) < 1e-3:
            break
    assert np.linalg.norm(p.data - target) < 1e-3


class TestSchedules:
    def test_warmup_cosine_endpoints(self):
        sched = LRSchedule(kind="warmup_cosine", base_lr=2.0, warmup_steps=100, total_steps=1000)
        assert lr_at(0, sched) == 0.0
        assert lr_at(100, sched) == 2.0
        assert abs(lr_at(1000, sched)) < 1e-15

    def test_step_decay_at_80_percent(self):
        sched = LRSchedule(kind="step_decay", base_lr=1.0, total_steps=1000)
        assert lr_at(int(0.9 * 1000), sched) == 0.1
        assert lr_at(int(0.5 * 1000), sched) == 1.0

    def test_step_decay_single_discontinuity(self):
        sched = LRSchedule(kind="step_decay", base_lr=1.0, total_steps=200)
        values = [lr_at(s, sched) for s in range(201)]
        jumps = sum(1 for a, b in zip(values, values[1:]) if a != b)
        assert jumps == 1

    def test_warmup_cosine_continuous(self):
        sched = LRSchedule(kind="warmup_cosine", base_lr=1.0, warmup_steps=50, total_steps=500)
        values = [lr_at(s, sched) for s in range(501)]
        max_jump = max(abs(a - b) for a, b in zip(values, values[1:]))
        assert max_jump < 0.05
        assert all(v >= 0.0 for v in values)

    def test_out_of_range(self):
        sched = LRSchedule(kind="constant", base_lr=1.0, total_steps=10)
        with pytest.raises(ParameterError):
            lr_at(11, sched)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ParameterError):
            LRSchedule(kind="linear")


class TestState:
    def test_state_round_trip_bitwise(self):
        rng = np.random.default_rng(5)
        p = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        opt = Adam({"p": p}, lr=1e-3)
        for _ in range(7):
            set_grad(p, rng.normal(size=(3, 3)))
            opt.step()
        state = opt.state_dict()

        p2 = Tensor(p.data.copy(), requires_grad=True)
        opt2 = Adam({"p": p2}, lr=1e-3)
        opt2.load_state_dict(state)
        grad = rng.normal(size=(3, 3))
        set_grad(p, grad)
        set_grad(p2, grad)
        opt.step()
        opt2.step()
        assert np.array_equal(p.data, p2.data)

    def test_kind_mismatch_rejected(self):
        p = Tensor([1.0], requires_grad=True)
        opt = Adam({"p": p})
        with pytest.raises(ParameterError):
            SGDMomentum({"p": p}).load_state_dict(opt.state_dict())

    def test_make_optimizer(self):
        p = Tensor([1.0], requires_grad=True)
        assert make_optimizer("lars", {"p": p}).kind == "lars"
        with pytest.raises(ParameterError):
            make_optimizer("nope", {"p": p})
