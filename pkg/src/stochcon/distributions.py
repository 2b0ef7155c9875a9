"""Pathwise-differentiable latent distributions and the temperature schedule.

Sampling is reparameterized: every variate is a deterministic, differentiable
function of the distribution parameters and parameter-free noise, so
gradients flow through z back into the encoder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError, ParameterError
from .tensor import Tensor

__all__ = [
    "GumbelBernoulli",
    "IsoGaussian",
    "TemperatureSchedule",
    "harden",
    "sample_gaussian",
    "sample_relaxed_bernoulli",
    "temperature_at",
]

# Uniform noise is clamped away from {0, 1} so logistic noise stays finite.
UNIFORM_CLAMP = 1e-7

# Relaxed variates must stay strictly inside (0, 1); float64 sigmoid rounds
# to exact 0.0/1.0 past |x| ~ 37, so saturated values are nudged one ulp in.
_OPEN_LO = np.nextafter(0.0, 1.0)
_OPEN_HI = np.nextafter(1.0, 0.0)

# Log-variance bounds for numerical safety during variance-collapse runs.
LOG_VAR_MIN = -20.0
LOG_VAR_MAX = 5.0


def sample_relaxed_bernoulli(logits: Tensor, temperature: float, u: np.ndarray) -> Tensor:
    """Relaxed binary variate z = sigmoid((logits + logistic(u)) / temperature).

    u is uniform noise in (0, 1) with the same shape as logits; z lies
    strictly inside (0, 1) and is differentiable wrt the logits.
    """
    if temperature <= 0.0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    u = np.clip(np.asarray(u, dtype=np.float64), UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP)
    if u.shape != logits.data.shape:
        raise DimensionError(f"noise shape {u.shape} does not match logits {logits.data.shape}")
    logistic = Tensor(np.log(u) - np.log1p(-u))
    z = ((logits + logistic) * (1.0 / temperature)).sigmoid()
    return z.clip(_OPEN_LO, _OPEN_HI)


def harden(relaxed: Tensor) -> Tensor:
    """Threshold a relaxed variate to exact {0, 1} with a straight-through backward.

    Forward emits 0.0 where relaxed < 0.5 and 1.0 where relaxed >= 0.5; the
    gradient is passed through unchanged, exactly as if harden were the
    identity.
    """
    out = Tensor._node(np.where(relaxed.data >= 0.5, 1.0, 0.0), (relaxed,), "harden")
    out._recompute = lambda: np.where(relaxed.data >= 0.5, 1.0, 0.0)
    out._vjp = lambda g: (g,)
    return out


def sample_gaussian(mean: Tensor, log_var: Tensor, eps: np.ndarray) -> Tensor:
    """Reparameterized Gaussian variate z = mean + exp(log_var / 2) * eps."""
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != mean.data.shape or mean.data.shape != log_var.data.shape:
        raise DimensionError(
            f"shape mismatch: mean {mean.data.shape}, log_var {log_var.data.shape}, eps {eps.shape}"
        )
    std = (log_var * 0.5).exp()
    return mean + std * Tensor(eps)


@dataclass
class GumbelBernoulli:
    """Gumbel-Bernoulli over independent bits, parameterized by natural logits."""

    logits: Tensor
    temperature: float
    hard: bool = False

    def __post_init__(self):
        if self.temperature <= 0.0:
            raise ParameterError(f"temperature must be positive, got {self.temperature}")

    def rsample(self, rng: np.random.Generator) -> Tensor:
        u = rng.uniform(size=self.logits.data.shape)
        z = sample_relaxed_bernoulli(self.logits, self.temperature, u)
        return harden(z) if self.hard else z

    def probs(self) -> Tensor:
        return self.logits.sigmoid()

    def mode(self) -> Tensor:
        """Deterministic evaluation variate: exact bits at probability >= 0.5."""
        return harden(self.probs())


@dataclass
class IsoGaussian:
    """Isotropic Gaussian with unconstrained log-variance parameterization."""

    mean: Tensor
    log_var: Tensor
    variance_source: str = "same_view"  # same_view | opposing_view; wiring recorded here

    def rsample(self, rng: np.random.Generator) -> Tensor:
        eps = rng.standard_normal(size=self.mean.data.shape)
        return sample_gaussian(self.mean, self.log_var, eps)

    def variance(self) -> Tensor:
        return self.log_var.clip(LOG_VAR_MIN, LOG_VAR_MAX).exp()

    def mode(self) -> Tensor:
        """Deterministic evaluation variate: the mean."""
        return self.mean


@dataclass
class TemperatureSchedule:
    """Single-cycle cosine anneal from start to end over total_steps."""

    start: float = 1.0
    end: float = 0.1
    total_steps: int = 1

    def __post_init__(self):
        if self.total_steps < 1:
            raise ParameterError("total_steps must be a positive integer")

    def value(self, step: int) -> float:
        return temperature_at(step, self)


def temperature_at(step: int, sched: TemperatureSchedule) -> float:
    """Cosine-annealed temperature; monotone non-increasing from start to end."""
    if not 0 <= step <= sched.total_steps:
        raise ParameterError(f"step {step} outside [0, {sched.total_steps}]")
    frac = step / sched.total_steps
    return sched.end + 0.5 * (sched.start - sched.end) * (1.0 + math.cos(math.pi * frac))
