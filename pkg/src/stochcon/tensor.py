"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine is deliberately small: numpy arrays in row-major order, one
vector-Jacobian closure per graph node, and topological accumulation at
backward time. Broadcasting is restricted to scalar-versus-tensor; every
other shape change goes through an explicit op (repeat_rows, repeat_cols,
reshape) so intermediate shapes stay auditable.

All forward math is single-threaded numpy and therefore bitwise
deterministic for identical inputs. Gradients accumulate additively
across backward() calls; callers zero them between optimizer steps.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ContractError, DimensionError, DomainError

__all__ = [
    "Tensor",
    "concat_rows",
    "l2_normalize",
    "log_sum_exp",
    "repeat_cols",
    "repeat_rows",
    "replay",
    "take_elements",
]


def _wrap(value) -> "Tensor":
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _is_scalar(arr: np.ndarray) -> bool:
    return arr.size == 1


def _reduce_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Collapse a broadcast gradient back onto a scalar operand."""
    if grad.shape == shape:
        return grad
    return grad.sum().reshape(shape)


def _check_elementwise(a: "Tensor", b: "Tensor", op: str) -> None:
    if a.data.shape == b.data.shape:
        return
    if _is_scalar(a.data) or _is_scalar(b.data):
        return
    raise DimensionError(
        f"{op}: shapes {a.data.shape} and {b.data.shape} differ and neither is scalar; "
        "use repeat_rows/repeat_cols for explicit expansion"
    )


class Tensor:
    """n-d float64 array with an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_recompute", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple = ()
        self._vjp = None
        self._recompute = None
        self._op = "leaf"

    # ------------------------------------------------------------------
    # basics

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return self.transpose()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() requires a scalar, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(op={self._op!r}, shape={self.data.shape}, requires_grad={self.requires_grad})"

    # ------------------------------------------------------------------
    # graph construction

    @classmethod
    def _node(cls, data, parents, op: str) -> "Tensor":
        out = cls(data)
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = tuple(parents)
        out._op = op
        return out

    def _topo(self):
        order, seen, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        return order

    def backward(self):
        """Accumulate dself/dx into x.grad for every requires_grad tensor below."""
        if self.data.size != 1:
            raise ContractError(f"backward() requires a scalar loss, got shape {self.data.shape}")
        order = self._topo()
        flowing = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = flowing.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            if node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                flowing[key] = pg if key not in flowing else flowing[key] + pg

    # ------------------------------------------------------------------
    # arithmetic

    def __add__(self, other):
        other = _wrap(other)
        _check_elementwise(self, other, "add")
        out = Tensor._node(self.data + other.data, (self, other), "add")
        out._recompute = lambda: self.data + other.data
        out._vjp = lambda g: (_reduce_to(g, self.data.shape), _reduce_to(g, other.data.shape))
        return out

    __radd__ = __add__

    def __sub__(self, other):
        other = _wrap(other)
        _check_elementwise(self, other, "sub")
        out = Tensor._node(self.data - other.data, (self, other), "sub")
        out._recompute = lambda: self.data - other.data
        out._vjp = lambda g: (_reduce_to(g, self.data.shape), _reduce_to(-g, other.data.shape))
        return out

    def __rsub__(self, other):
        return _wrap(other).__sub__(self)

    def __mul__(self, other):
        other = _wrap(other)
        _check_elementwise(self, other, "mul")
        out = Tensor._node(self.data * other.data, (self, other), "mul")
        out._recompute = lambda: self.data * other.data
        out._vjp = lambda g: (
            _reduce_to(g * other.data, self.data.shape),
            _reduce_to(g * self.data, other.data.shape),
        )
        return out

    __rmul__ = __mul__

    def __neg__(self):
        out = Tensor._node(-self.data, (self,), "neg")
        out._recompute = lambda: -self.data
        out._vjp = lambda g: (-g,)
        return out

    def scale(self, factor: float):
        """Multiply by a python scalar."""
        return self * float(factor)

    def __matmul__(self, other):
        other = _wrap(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise DimensionError("matmul requires 2-d operands; reshape explicitly")
        if self.data.shape[1] != other.data.shape[0]:
            raise DimensionError(
                f"matmul: inner dimensions disagree ({self.data.shape} @ {other.data.shape})"
            )
        out = Tensor._node(self.data @ other.data, (self, other), "matmul")
        out._recompute = lambda: self.data @ other.data
        out._vjp = lambda g: (g @ other.data.T, self.data.T @ g)
        return out

    # ------------------------------------------------------------------
    # elementwise nonlinearities

    def exp(self):
        out = Tensor._node(np.exp(self.data), (self,), "exp")
        out._recompute = lambda: np.exp(self.data)
        out._vjp = lambda g: (g * out.data,)
        return out

    def log(self):
        if np.any(self.data <= 0.0):
            raise DomainError("log requires strictly positive input")
        out = Tensor._node(np.log(self.data), (self,), "log")
        out._recompute = lambda: np.log(self.data)
        out._vjp = lambda g: (g / self.data,)
        return out

    def sigmoid(self):
        # Stable piecewise form keeps exp arguments non-positive.
        data = _sigmoid(self.data)
        out = Tensor._node(data, (self,), "sigmoid")
        out._recompute = lambda: _sigmoid(self.data)
        out._vjp = lambda g: (g * out.data * (1.0 - out.data),)
        return out

    def relu(self):
        out = Tensor._node(np.maximum(self.data, 0.0), (self,), "relu")
        out._recompute = lambda: np.maximum(self.data, 0.0)
        out._vjp = lambda g: (g * (self.data > 0.0),)
        return out

    def clip(self, lo: float, hi: float):
        """Clamp values to [lo, hi]; gradient passes only where unclamped."""
        out = Tensor._node(np.clip(self.data, lo, hi), (self,), "clip")
        out._recompute = lambda: np.clip(self.data, lo, hi)
        out._vjp = lambda g: (g * ((self.data >= lo) & (self.data <= hi)),)
        return out

    # ------------------------------------------------------------------
    # reductions

    def sum(self, axis=None):
        self._check_axis(axis, "sum")
        out = Tensor._node(self.data.sum(axis=axis), (self,), "sum")
        out._recompute = lambda: self.data.sum(axis=axis)

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, self.data.shape).copy(),)
            return (np.broadcast_to(np.expand_dims(g, axis), self.data.shape).copy(),)

        out._vjp = vjp
        return out

    def mean(self, axis=None):
        self._check_axis(axis, "mean")
        n = self.data.size if axis is None else self.data.shape[axis]
        out = Tensor._node(self.data.mean(axis=axis), (self,), "mean")
        out._recompute = lambda: self.data.mean(axis=axis)

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g / n, self.data.shape).copy(),)
            return (np.broadcast_to(np.expand_dims(g, axis) / n, self.data.shape).copy(),)

        out._vjp = vjp
        return out

    def max(self, axis=None):
        """Maximum; backward routes the gradient to the first maximal element."""
        self._check_axis(axis, "max")
        out = Tensor._node(self.data.max(axis=axis), (self,), "max")
        out._recompute = lambda: self.data.max(axis=axis)

        def vjp(g):
            mask = np.zeros_like(self.data)
            if axis is None:
                # np.argmax on the flat array picks the lowest index on ties
                mask.reshape(-1)[np.argmax(self.data)] = 1.0
                return (mask * g,)
            idx = np.expand_dims(np.argmax(self.data, axis=axis), axis)
            np.put_along_axis(mask, idx, 1.0, axis=axis)
            return (mask * np.expand_dims(g, axis),)

        out._vjp = vjp
        return out

    def _check_axis(self, axis, op):
        if axis is None:
            return
        if not isinstance(axis, int) or not -self.data.ndim <= axis < self.data.ndim:
            raise DimensionError(f"{op}: axis {axis} invalid for shape {self.data.shape}")

    # ------------------------------------------------------------------
    # shape ops

    def reshape(self, shape):
        orig = self.data.shape
        out = Tensor._node(self.data.reshape(shape), (self,), "reshape")
        out._recompute = lambda: self.data.reshape(shape)
        out._vjp = lambda g: (g.reshape(orig),)
        return out

    def transpose(self):
        if self.data.ndim != 2:
            raise DimensionError("transpose requires a 2-d tensor")
        out = Tensor._node(self.data.T.copy(), (self,), "transpose")
        out._recompute = lambda: self.data.T.copy()
        out._vjp = lambda g: (g.T.copy(),)
        return out

    def take_rows(self, indices):
        """Gather along axis 0; repeated indices accumulate gradient."""
        idx = np.asarray(indices, dtype=np.intp)
        if idx.ndim != 1:
            raise DimensionError("take_rows expects a 1-d index array")
        if self.data.shape[0] == 0 or idx.size and (idx.min() < 0 or idx.max() >= self.data.shape[0]):
            raise DimensionError("take_rows: index out of range")
        out = Tensor._node(self.data[idx], (self,), "take_rows")
        out._recompute = lambda: self.data[idx]

        def vjp(g):
            full = np.zeros_like(self.data)
            np.add.at(full, idx, g)
            return (full,)

        out._vjp = vjp
        return out

    def slice_cols(self, start: int, stop: int):
        if self.data.ndim != 2:
            raise DimensionError("slice_cols requires a 2-d tensor")
        if not 0 <= start < stop <= self.data.shape[1]:
            raise DimensionError(f"slice_cols: [{start}, {stop}) invalid for shape {self.data.shape}")
        out = Tensor._node(self.data[:, start:stop].copy(), (self,), "slice_cols")
        out._recompute = lambda: self.data[:, start:stop].copy()

        def vjp(g):
            full = np.zeros_like(self.data)
            full[:, start:stop] = g
            return (full,)

        out._vjp = vjp
        return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def take_elements(t: Tensor, rows, cols) -> Tensor:
    """Fancy-index a 2-d tensor at (rows[i], cols[i]) pairs, returning a vector."""
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    if t.data.ndim != 2 or rows.shape != cols.shape or rows.ndim != 1:
        raise DimensionError("take_elements expects a 2-d tensor and matching 1-d index arrays")
    out = Tensor._node(t.data[rows, cols], (t,), "take_elements")
    out._recompute = lambda: t.data[rows, cols]

    def vjp(g):
        full = np.zeros_like(t.data)
        np.add.at(full, (rows, cols), g)
        return (full,)

    out._vjp = vjp
    return out


def concat_rows(tensors) -> Tensor:
    """Concatenate along axis 0."""
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat_rows needs at least one tensor")
    data = np.concatenate([t.data for t in tensors], axis=0)
    out = Tensor._node(data, tensors, "concat_rows")
    out._recompute = lambda: np.concatenate([t.data for t in tensors], axis=0)
    sizes = [t.data.shape[0] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(tensors)))

    out._vjp = vjp
    return out


def repeat_rows(t: Tensor, n: int) -> Tensor:
    """Tile a vector into n identical rows; backward sums over rows."""
    if t.data.ndim != 1:
        raise DimensionError("repeat_rows expects a 1-d tensor")
    out = Tensor._node(np.tile(t.data, (n, 1)), (t,), "repeat_rows")
    out._recompute = lambda: np.tile(t.data, (n, 1))
    out._vjp = lambda g: (g.sum(axis=0),)
    return out


def repeat_cols(t: Tensor, n: int) -> Tensor:
    """Tile a vector into n identical columns; backward sums over columns."""
    if t.data.ndim != 1:
        raise DimensionError("repeat_cols expects a 1-d tensor")
    out = Tensor._node(np.tile(t.data[:, None], (1, n)), (t,), "repeat_cols")
    out._recompute = lambda: np.tile(t.data[:, None], (1, n))
    out._vjp = lambda g: (g.sum(axis=1),)
    return out


def l2_normalize(t: Tensor, eps: float = 1e-12) -> Tensor:
    """x / max(||x||_2, eps), per row for 2-d input.

    The output norm is 1 whenever ||x|| >= eps and the zero vector maps to
    itself, so the guard never divides by zero.
    """
    if t.data.ndim == 1:
        norm = np.linalg.norm(t.data)
        denom = max(norm, eps)
        out = Tensor._node(t.data / denom, (t,), "l2_normalize")
        out._recompute = lambda: t.data / max(np.linalg.norm(t.data), eps)

        def vjp(g):
            if norm < eps:
                return (g / eps,)
            y = out.data
            return ((g - y * np.dot(y, g)) / norm,)

        out._vjp = vjp
        return out
    if t.data.ndim == 2:
        norms = np.linalg.norm(t.data, axis=1, keepdims=True)
        denom = np.maximum(norms, eps)
        out = Tensor._node(t.data / denom, (t,), "l2_normalize")

        def recompute():
            ns = np.linalg.norm(t.data, axis=1, keepdims=True)
            return t.data / np.maximum(ns, eps)

        out._recompute = recompute

        def vjp(g):
            y = out.data
            inner = (y * g).sum(axis=1, keepdims=True)
            guarded = (g - y * inner) / denom
            small = norms < eps
            if np.any(small):
                guarded = np.where(small, g / eps, guarded)
            return (guarded,)

        out._vjp = vjp
        return out
    raise DimensionError("l2_normalize supports 1-d and 2-d tensors")


def log_sum_exp(t: Tensor, axis=None) -> Tensor:
    """log(sum(exp(x))) with max subtraction; exact for constant input."""
    if t.data.size == 0:
        raise DimensionError("log_sum_exp of an empty tensor")
    t._check_axis(axis, "log_sum_exp")
    m = t.data.max(axis=axis, keepdims=True)
    shifted = np.exp(t.data - m)
    total = shifted.sum(axis=axis, keepdims=True)
    data = (m + np.log(total)).reshape(t.data.max(axis=axis).shape)
    out = Tensor._node(data, (t,), "log_sum_exp")

    def recompute():
        mm = t.data.max(axis=axis, keepdims=True)
        tt = np.exp(t.data - mm).sum(axis=axis, keepdims=True)
        return (mm + np.log(tt)).reshape(t.data.max(axis=axis).shape)

    out._recompute = recompute

    def vjp(g):
        soft = shifted / total
        if axis is None:
            return (soft * g,)
        return (soft * np.expand_dims(g, axis),)

    out._vjp = vjp
    return out


def replay(t: Tensor) -> None:
    """Recompute every node below t from current leaf values, in place."""
    for node in t._topo():
        if node._recompute is not None:
            node.data = np.asarray(node._recompute(), dtype=np.float64)
