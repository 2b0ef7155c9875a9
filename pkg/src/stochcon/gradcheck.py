"""Finite-difference gradient verification.

The numerical side re-evaluates the loss from scratch on perturbed leaf
values, so it stays independent of the reverse-mode path it checks.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

__all__ = ["finite_difference_gradient", "check_gradients", "max_relative_error"]

DEFAULT_STEP = 1e-5


def finite_difference_gradient(loss_fn, param: Tensor, step: float = DEFAULT_STEP) -> np.ndarray:
    """Central-difference gradient of loss_fn() wrt param, element by element.

    loss_fn must rebuild its forward pass from param.data on every call.
    """
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = loss_fn().item()
        flat[i] = orig - step
        down = loss_fn().item()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * step)
    return grad


def max_relative_error(a: np.ndarray, b: np.ndarray, atol: float = 1e-8) -> float:
    """max |a-b| / max(atol, |a|, |b|), elementwise."""
    num = np.abs(a - b)
    den = np.maximum(atol, np.maximum(np.abs(a), np.abs(b)))
    return float((num / den).max()) if num.size else 0.0


def check_gradients(loss_fn, params, rtol: float = 1e-4, step: float = DEFAULT_STEP) -> float:
    """Compare reverse-mode gradients of loss_fn against central differences.

    params is an iterable of leaf tensors with requires_grad set. Returns
    the worst relative error observed; raises AssertionError above rtol.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    worst = 0.0
    for p in params:
        numeric = finite_difference_gradient(loss_fn, p, step=step)
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        err = max_relative_error(analytic, numeric)
        worst = max(worst, err)
        if err > rtol:
            raise AssertionError(
                f"gradient mismatch (rel err {err:.3e} > {rtol:.1e}) on tensor {p!r}"
            )
    return worst
