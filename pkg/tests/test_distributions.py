"""Latent distributions: Monte-Carlo statistics, straight-through exactness, annealing."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochcon.distributions import (
    GumbelBernoulli,
    IsoGaussian,
    TemperatureSchedule,
    harden,
    sample_gaussian,
    sample_relaxed_bernoulli,
    temperature_at,
)
from stochcon.exceptions import DimensionError, ParameterError
from stochcon.gradcheck import check_gradients
from stochcon.tensor import Tensor


class TestRelaxedBernoulli:
    def test_zero_noise_gives_sigmoid(self):
        logits = Tensor(np.array([-2.0, 0.0, 3.0]))
        z = sample_relaxed_bernoulli(logits, 0.7, np.full(3, 0.5))
        expected = 1.0 / (1.0 + np.exp(-logits.data / 0.7))
        assert np.allclose(z.data, expected, atol=1e-12)

    def test_open_unit_interval(self):
        rng = np.random.default_rng(0)
        logits = Tensor(rng.normal(size=1000) * 5)
        z = sample_relaxed_bernoulli(logits, 0.1, rng.uniform(size=1000))
        assert np.all(z.data > 0.0) and np.all(z.data < 1.0)

    def test_nonpositive_temperature_rejected(self):
        with pytest.raises(ParameterError):
            sample_relaxed_bernoulli(Tensor([0.0]), 0.0, np.array([0.5]))

    def test_hardened_mean_matches_fair_coin(self):
        # logits 0 at low temperature: hardened variates are Bernoulli(0.5)
        rng = np.random.default_rng(7)
        n = 100_000
        z = sample_relaxed_bernoulli(Tensor(np.zeros(n)), 0.1, rng.uniform(size=n))
        hard = harden(z).data
        se = np.sqrt(0.25 / n)
        assert abs(hard.mean() - 0.5) < 3 * se

    def test_low_temperature_concentrates(self):
        rng = np.random.default_rng(11)
        n = 10_000
        z = sample_relaxed_bernoulli(Tensor(np.full(n, 5.0)), 0.01, rng.uniform(size=n))
        assert np.mean(z.data > 0.99) >= 0.99

    def test_gradient_wrt_logits(self):
        rng = np.random.default_rng(3)
        logits = Tensor(rng.normal(size=6), requires_grad=True)
        u = rng.uniform(size=6)
        w = rng.normal(size=6)
        check_gradients(
            lambda: (sample_relaxed_bernoulli(logits, 0.5, u) * Tensor(w)).sum(),
            [logits],
            rtol=1e-5,
        )

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(st.floats(-8, 8), min_size=1, max_size=8),
        st.floats(0.05, 2.0),
        st.floats(1e-6, 1 - 1e-6),
    )
    def test_monotone_in_logits(self, base, temp, u):
        base = np.asarray(base)
        noise = np.full(base.shape, u)
        lo = sample_relaxed_bernoulli(Tensor(base), temp, noise).data
        hi = sample_relaxed_bernoulli(Tensor(base + 0.5), temp, noise).data
        assert np.all(hi >= lo)


class TestHarden:
    def test_threshold_values(self):
        out = harden(Tensor([0.3, 0.5, 0.7, 0.49999]))
        assert np.array_equal(out.data, [0.0, 1.0, 1.0, 0.0])

    def test_outputs_exactly_binary(self):
        rng = np.random.default_rng(5)
        out = harden(Tensor(rng.uniform(size=1000)))
        assert np.all((out.data == 0.0) | (out.data == 1.0))

    def test_straight_through_sum_gradient(self):
        relaxed = Tensor([0.2, 0.6, 0.4], requires_grad=True)
        harden(relaxed).sum().backward()
        assert np.array_equal(relaxed.grad, np.ones(3))

    def test_straight_through_equals_identity_path(self):
        # identical upstream gradients with and without harden, bit for bit
        rng = np.random.default_rng(9)
        w = Tensor(rng.normal(size=8))
        relaxed_a = Tensor(rng.uniform(size=8), requires_grad=True)
        relaxed_b = Tensor(relaxed_a.data.copy(), requires_grad=True)
        (harden(relaxed_a) * w).sum().backward()
        (relaxed_b * w).sum().backward()
        assert np.array_equal(relaxed_a.grad, relaxed_b.grad)


class TestGaussian:
    def test_zero_noise_returns_mean(self):
        mean = Tensor([1.0, -2.0, 3.0])
        z = sample_gaussian(mean, Tensor(np.zeros(3)), np.zeros(3))
        assert np.array_equal(z.data, mean.data)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            sample_gaussian(Tensor([0.0, 1.0]), Tensor([0.0]), np.zeros(2))

    def test_standard_normal_statistics(self):
        rng = np.random.default_rng(21)
        n = 100_000
        z = sample_gaussian(Tensor(np.zeros(n)), Tensor(np.zeros(n)), rng.standard_normal(n)).data
        assert abs(z.mean()) < 3.0 / np.sqrt(n)
        assert abs(z.var() - 1.0) < 0.05

    def test_gradient_wrt_log_var(self):
        rng = np.random.default_rng(2)
        mean = Tensor(rng.normal(size=5), requires_grad=True)
        log_var = Tensor(rng.normal(size=5) * 0.3, requires_grad=True)
        eps = rng.standard_normal(5)
        check_gradients(
            lambda: sample_gaussian(mean, log_var, eps).sum(),
            [mean, log_var],
            rtol=1e-5,
        )

    def test_rsample_wrapper(self):
        rng = np.random.default_rng(4)
        dist = IsoGaussian(Tensor(np.zeros(4)), Tensor(np.zeros(4)))
        z = dist.rsample(rng)
        assert z.data.shape == (4,)
        assert np.array_equal(dist.mode().data, np.zeros(4))


class TestTemperatureSchedule:
    def test_endpoints(self):
        sched = TemperatureSchedule(start=1.0, end=0.1, total_steps=1000)
        assert temperature_at(0, sched) == 1.0
        assert abs(temperature_at(1000, sched) - 0.1) < 1e-15

    def test_midpoint_is_arithmetic_mean(self):
        sched = TemperatureSchedule(start=1.0, end=0.1, total_steps=1000)
        assert abs(temperature_at(500, sched) - 0.55) < 1e-12

    def test_monotone_non_increasing(self):
        sched = TemperatureSchedule(total_steps=200)
        values = [temperature_at(s, sched) for s in range(201)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_out_of_range_rejected(self):
        sched = TemperatureSchedule(total_steps=10)
        with pytest.raises(ParameterError):
            temperature_at(11, sched)
        with pytest.raises(ParameterError):
            temperature_at(-1, sched)


class TestGumbelBernoulliObject:
    def test_hard_mode_variates_binary(self):
        rng = np.random.default_rng(13)
        dist = GumbelBernoulli(Tensor(rng.normal(size=64)), temperature=0.5, hard=True)
        z = dist.rsample(rng)
        assert np.all((z.data == 0.0) | (z.data == 1.0))

    def test_soft_mode_variates_open_interval(self):
        rng = np.random.default_rng(13)
        dist = GumbelBernoulli(Tensor(rng.normal(size=64)), temperature=0.5, hard=False)
        z = dist.rsample(rng)
        assert np.all((z.data > 0.0) & (z.data < 1.0))

    def test_mode_thresholds_probs(self):
        dist = GumbelBernoulli(Tensor([-1.0, 0.0, 2.0]), temperature=0.5)
        assert np.array_equal(dist.mode().data, [0.0, 1.0, 1.0])
