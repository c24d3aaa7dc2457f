"""Reverse-mode automatic differentiation on dense float64 arrays.

Rank 0-2 tensors, row-major, no broadcasting: every op states exactly
which shapes it accepts and raises ShapeError otherwise. Ops executed
while a Tape is active append their adjoint closures to it; Tape.backward
replays the closures once, in reverse execution order, accumulating
gradients into every tensor with requires_grad set.

Typical use::

    w = Tensor(weights, requires_grad=True)
    with Tape() as tape:
        loss = cross_entropy(target, softmax(matmul(x, transpose(w))))
    tape.backward(loss)
    # w.grad now holds dloss/dw

Running the same ops with no active tape performs plain forward
computation (inference mode).
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

LOG_EPS = 1e-12  # floor applied to predictions inside cross_entropy

_state = threading.local()


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


def _tape_stack() -> list:
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = []
        _state.stack = stack
    return stack


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Dense float64 array with an optional accumulated gradient."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        # ascontiguousarray promotes 0-d to 1-d; keep true scalars 0-d
        self.data = np.ascontiguousarray(arr) if arr.ndim else arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={list(self.shape)}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of executed ops for one backward pass.

    Entries are appended in execution order, which is automatically a
    topological order of the graph, so a single reversed sweep suffices.
    A tape can be consumed by backward() exactly once.
    """

    def __init__(self):
        self._entries: list[Callable[[], None]] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        assert stack and stack[-1] is self
        stack.pop()

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, backward_fn: Callable[[], None]) -> None:
        self._entries.append(backward_fn)

    def backward(self, root: Tensor) -> None:
        """Seed d(root)/d(root)=1 and accumulate grads through the record."""
        if self._consumed:
            raise RuntimeError("tape already consumed by a previous backward()")
        if root.data.size != 1:
            raise ShapeError(f"backward root must be scalar, got shape {root.shape}")
        self._consumed = True
        root.accumulate_grad(np.ones_like(root.data))
        for fn in reversed(self._entries):
            fn()


def _maybe_record(out: Tensor, backward_fn: Callable[[], None]) -> None:
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape.record(backward_fn)


def _binary_shape_check(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------- basic ops

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner extents differ for {a.shape} and {b.shape}")
    out = Tensor(a.data @ b.data, a.requires_grad or b.requires_grad)

    def backward():
        if out.grad is None:
            return
        if a.requires_grad:
            a.accumulate_grad(out.grad @ b.data.T)
        if b.requires_grad:
            b.accumulate_grad(a.data.T @ out.grad)

    _maybe_record(out, backward)
    return out


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose needs a rank-2 operand, got {a.shape}")
    out = Tensor(a.data.T, a.requires_grad)

    def backward():
        if out.grad is not None and a.requires_grad:
            a.accumulate_grad(out.grad.T)

    _maybe_record(out, backward)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shape_check("add", a, b)
    out = Tensor(a.data + b.data, a.requires_grad or b.requires_grad)

    def backward():
        if out.grad is None:
            return
        if a.requires_grad:
            a.accumulate_grad(out.grad)
        if b.requires_grad:
            b.accumulate_grad(out.grad)

    _maybe_record(out, backward)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_shape_check("mul", a, b)
    out = Tensor(a.data * b.data, a.requires_grad or b.requires_grad)

    def backward():
        if out.grad is None:
            return
        if a.requires_grad:
            a.accumulate_grad(out.grad * b.data)
        if b.requires_grad:
            b.accumulate_grad(out.grad * a.data)

    _maybe_record(out, backward)
    return out


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(a.data * c, a.requires_grad)

    def backward():
        if out.grad is not None and a.requires_grad:
            a.accumulate_grad(out.grad * c)

    _maybe_record(out, backward)
    return out


def add_bias(m: Tensor, v: Tensor) -> Tensor:
    """Add a length-n vector to every row of an m x n matrix."""
    if m.data.ndim != 2 or v.data.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeError(f"add_bias: got matrix {m.shape} and vector {v.shape}")
    out = Tensor(m.data + v.data[np.newaxis, :], m.requires_grad or v.requires_grad)

    def backward():
        if out.grad is None:
            return
        if m.requires_grad:
            m.accumulate_grad(out.grad)
        if v.requires_grad:
            v.accumulate_grad(out.grad.sum(axis=0))

    _maybe_record(out, backward)
    return out


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # piecewise form avoids overflow in exp for large |x|
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(s, a.requires_grad)

    def backward():
        if out.grad is not None and a.requires_grad:
            a.accumulate_grad(out.grad * out.data * (1.0 - out.data))

    _maybe_record(out, backward)
    return out


def tanh(a: Tensor) -> Tensor:
    out = Tensor(np.tanh(a.data), a.requires_grad)

    def backward():
        if out.grad is not None and a.requires_grad:
            a.accumulate_grad(out.grad * (1.0 - out.data * out.data))

    _maybe_record(out, backward)
    return out


def square(a: Tensor) -> Tensor:
    out = Tensor(a.data * a.data, a.requires_grad)

    def backward():
        if out.grad is not None and a.requires_grad:
            a.accumulate_grad(out.grad * 2.0 * a.data)

    _maybe_record(out, backward)
    return out


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ShapeError("concat needs at least one tensor")
    ndim = parts[0].data.ndim
    for p in parts:
        if p.data.ndim != ndim:
            raise ShapeError("concat: mixed ranks")
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis),
                 any(p.requires_grad for p in parts))
    offsets = np.cumsum([p.data.shape[axis] for p in parts])[:-1]

    def backward():
        if out.grad is None:
            return
        for p, seg in zip(parts, np.split(out.grad, offsets, axis=axis)):
            if p.requires_grad:
                p.accumulate_grad(seg)

    _maybe_record(out, backward)
    return out


def slice_(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice [start, stop) along one axis, copied out."""
    if axis < 0 or axis >= a.data.ndim:
        raise ShapeError(f"slice_: axis {axis} out of range for shape {a.shape}")
    extent = a.shape[axis]
    if not (0 <= start < stop <= extent):
        raise ShapeError(f"slice_: bounds [{start}, {stop}) invalid for extent {extent}")
    index = tuple(slice(start, stop) if d == axis else slice(None) for d in range(a.data.ndim))
    out = Tensor(a.data[index].copy(), a.requires_grad)

    def backward():
        if out.grad is not None and a.requires_grad:
            g = np.zeros_like(a.data)
            g[index] = out.grad
            a.accumulate_grad(g)

    _maybe_record(out, backward)
    return out


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.data.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    out = Tensor(a.data.reshape(shape), a.requires_grad)

    def backward():
        if out.grad is not None and a.requires_grad:
            a.accumulate_grad(out.grad.reshape(a.data.shape))

    _maybe_record(out, backward)
    return out


def sum_(a: Tensor) -> Tensor:
    """Sum of all elements, as a scalar (rank-0) tensor."""
    out = Tensor(a.data.sum(), a.requires_grad)

    def backward():
        if out.grad is not None and a.requires_grad:
            a.accumulate_grad(np.full_like(a.data, out.grad.item()))

    _maybe_record(out, backward)
    return out


# ----------------------------------------------------- probabilistic ops

def softmax(a: Tensor) -> Tensor:
    """Row-stochastic softmax over the trailing axis, with max-subtraction."""
    if a.data.ndim not in (1, 2):
        raise ShapeError(f"softmax needs rank 1 or 2, got {a.shape}")
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(s, a.requires_grad)

    def backward():
        if out.grad is None or not a.requires_grad:
            return
        g = out.grad
        dot = (g * out.data).sum(axis=-1, keepdims=True)
        a.accumulate_grad(out.data * (g - dot))

    _maybe_record(out, backward)
    return out


def softmax2(a: Tensor) -> Tensor:
    """softmax restricted to trailing pairs (bit distributions)."""
    if a.shape[-1] != 2:
        raise ShapeError(f"softmax2 needs trailing extent 2, got {a.shape}")
    return softmax(a)


def cross_entropy(target: Tensor, pred: Tensor) -> Tensor:
    """-sum(target * ln(pred)), summed over every entry (all rows).

    pred is floored at LOG_EPS before the log. Gradients flow to both
    arguments when they require them.
    """
    if target.shape != pred.shape:
        raise ShapeError(f"cross_entropy: support shapes {target.shape} and {pred.shape} differ")
    clamped = np.maximum(pred.data, LOG_EPS)
    log_p = np.log(clamped)
    out = Tensor(-(target.data * log_p).sum(), target.requires_grad or pred.requires_grad)

    def backward():
        if out.grad is None:
            return
        g = out.grad.item()
        if pred.requires_grad:
            active = pred.data >= LOG_EPS  # floored entries carry no gradient
            pred.accumulate_grad(g * np.where(active, -target.data / clamped, 0.0))
        if target.requires_grad:
            target.accumulate_grad(g * -log_p)

    _maybe_record(out, backward)
    return out


# ------------------------------------------------------- gradient checking

def gradient_check(f: Callable[[Tensor], Tensor], point: Tensor, step: float = 1e-5) -> float:
    """Max relative error between f's backward pass and central differences.

    Relative error per coordinate is |analytic - numeric| / max(1, |analytic|).
    f must map a tensor to a scalar tensor.
    """
    if not (1e-7 < step < 1e-3):
        raise ValueError(f"step {step} outside (1e-7, 1e-3)")
    x = Tensor(point.data.copy(), requires_grad=True)
    with Tape() as tape:
        y = f(x)
    if y.data.size != 1:
        raise ShapeError(f"gradient_check: f returned shape {y.shape}, expected scalar")
    tape.backward(y)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    flat = x.data.reshape(-1)
    numeric = np.empty_like(analytic).reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = f(x).item()
        flat[i] = orig - step
        f_minus = f(x).item()
        flat[i] = orig
        numeric[i] = (f_plus - f_minus) / (2.0 * step)

    denom = np.maximum(1.0, np.abs(analytic))
    return float((np.abs(analytic - numeric.reshape(analytic.shape)) / denom).max())


def check_param_gradients(loss_fn: Callable[[], Tensor], tensors: Sequence[Tensor],
                          step: float = 1e-5) -> float:
    """gradient_check generalized to a loss over several existing tensors.

    loss_fn rebuilds the forward graph from the tensors' current data, so
    central differences are taken by perturbing each coordinate in place.
    Returns the max relative error over every coordinate of every tensor.
    """
    for t in tensors:
        t.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    analytics = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    worst = 0.0
    for t, analytic in zip(tensors, analytics):
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = loss_fn().item()
            flat[i] = orig - step
            f_minus = loss_fn().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(1.0, abs(a))
            if err > worst:
                worst = err
    for t in tensors:
        t.zero_grad()
    return worst
