"""Optimizers and learning-rate schedules for pretraining and finetuning.

Optimizers operate on a dict of named parameter tensors; gradients are read
from each tensor's grad buffer and must be zeroed by the caller between
steps. All state is exposed through state_dict/load_state_dict so it can
round-trip bitwise through the checkpoint format.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ParameterError
from .tensor import Tensor

__all__ = [
    "SGDMomentum",
    "LARS",
    "Adam",
    "LRSchedule",
    "lr_at",
    "make_optimizer",
]

LARS_EPS = 1e-9


class Optimizer:
    kind = "base"

    def __init__(self, params: dict, lr: float):
        self.params = dict(params)
        self.lr = float(lr)
        self.step_count = 0

    def _grads(self):
        for name, p in self.params.items():
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            yield name, p, grad

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        raise NotImplementedError

    def state_dict(self) -> dict:
        return {"kind": self.kind, "step_count": self.step_count, "slots": self._slots()}

    def load_state_dict(self, state: dict):
        if state["kind"] != self.kind:
            raise ParameterError(f"optimizer kind mismatch: {state['kind']} != {self.kind}")
        self.step_count = int(state["step_count"])
        for slot_name, per_param in state["slots"].items():
            slot = getattr(self, slot_name)
            for pname, arr in per_param.items():
                slot[pname] = np.asarray(arr, dtype=np.float64).copy()

    def _slots(self) -> dict:
        return {}


class SGDMomentum(Optimizer):
    """Classic momentum: buf <- momentum*buf + grad; param <- param - lr*buf."""

    kind = "sgd"

    def __init__(self, params, lr=0.01, momentum=0.9):
        super().__init__(params, lr)
        self.momentum = float(momentum)
        self.buf = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self):
        for name, p, grad in self._grads():
            self.buf[name] = self.momentum * self.buf[name] + grad
            p.data = p.data - self.lr * self.buf[name]
        self.step_count += 1

    def _slots(self):
        return {"buf": self.buf}


class LARS(Optimizer):
    """Layer-wise adaptive rate scaling on top of momentum SGD.

    Per parameter tensor: local_lr = trust_coeff * |w| / (|g + wd*w| + eps),
    falling back to 1 when |w| is zero. One-dimensional parameters (biases)
    are excluded from both the trust ratio and weight decay.
    """

    kind = "lars"

    def __init__(self, params, lr=1.0, momentum=0.9, weight_decay=1e-6, trust_coeff=0.001):
        super().__init__(params, lr)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self.trust_coeff = float(trust_coeff)
        self.buf = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self):
        for name, p, grad in self._grads():
            if p.data.ndim > 1:
                grad = grad + self.weight_decay * p.data
                w_norm = np.linalg.norm(p.data)
                g_norm = np.linalg.norm(grad)
                local_lr = 1.0 if w_norm == 0.0 else self.trust_coeff * w_norm / (g_norm + LARS_EPS)
                grad = grad * local_lr
            self.buf[name] = self.momentum * self.buf[name] + grad
            p.data = p.data - self.lr * self.buf[name]
        self.step_count += 1

    def _slots(self):
        return {"buf": self.buf}


class Adam(Optimizer):
    """Bias-corrected Adam."""

    kind = "adam"

    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        super().__init__(params, lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self):
        self.step_count += 1
        t = self.step_count
        for name, p, grad in self._grads():
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * grad
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * grad * grad
            m_hat = self.m[name] / (1.0 - self.beta1**t)
            v_hat = self.v[name] / (1.0 - self.beta2**t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def _slots(self):
        return {"m": self.m, "v": self.v}


_OPTIMIZERS = {"sgd": SGDMomentum, "lars": LARS, "adam": Adam}


def make_optimizer(kind: str, params: dict, **kwargs) -> Optimizer:
    if kind not in _OPTIMIZERS:
        raise ParameterError(f"unknown optimizer {kind!r}; expected one of {sorted(_OPTIMIZERS)}")
    return _OPTIMIZERS[kind](params, **kwargs)


@dataclass
class LRSchedule:
    """Learning-rate schedule: warmup_cosine, step_decay, or constant.

    warmup_cosine ramps linearly from 0 to base_lr over warmup_steps, then
    cosine-decays to 0 at total_steps. step_decay multiplies by decay_factor
    once step reaches decay_point * total_steps.
    """

    kind: str = "warmup_cosine"
    base_lr: float = 1.0
    warmup_steps: int = 0
    total_steps: int = 1
    decay_factor: float = 0.1
    decay_point: float = 0.8

    def __post_init__(self):
        if self.kind not in ("warmup_cosine", "step_decay", "constant"):
            raise ParameterError(f"unknown schedule kind {self.kind!r}")
        if self.total_steps < 1:
            raise ParameterError("total_steps must be positive")
        if self.kind == "warmup_cosine" and not 0 <= self.warmup_steps < self.total_steps:
            raise ParameterError("warmup_steps must lie in [0, total_steps)")

    def value(self, step: int) -> float:
        return lr_at(step, self)


def lr_at(step: int, sched: LRSchedule) -> float:
    if not 0 <= step <= sched.total_steps:
        raise ParameterError(f"step {step} outside [0, {sched.total_steps}]")
    if sched.kind == "constant":
        return sched.base_lr
    if sched.kind == "step_decay":
        if step >= sched.decay_point * sched.total_steps:
            return sched.base_lr * sched.decay_factor
        return sched.base_lr
    # warmup_cosine
    if step < sched.warmup_steps:
        return sched.base_lr * step / sched.warmup_steps
    span = sched.total_steps - sched.warmup_steps
    frac = (step - sched.warmup_steps) / span
    return sched.base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))
