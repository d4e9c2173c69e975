"""Tensor value type and the reverse-mode tape.

A :class:`Tensor` wraps an immutable numpy buffer. When any input of an op
requires a gradient (and recording is enabled), the result keeps references
to its parents plus a closure mapping the output gradient to parent gradients.
:func:`backward` walks that DAG once in reverse topological order.
"""
from __future__ import annotations

import contextlib
import enum
from typing import Callable, Iterable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested op."""


class PrecisionError(TypeError):
    """Operands mix F32 and F64."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


class Precision(enum.Enum):
    F32 = 0
    F64 = 1

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float32) if self is Precision.F32 else np.dtype(np.float64)

    @classmethod
    def of(cls, dtype) -> "Precision":
        dtype = np.dtype(dtype)
        if dtype == np.float32:
            return cls.F32
        if dtype == np.float64:
            return cls.F64
        raise PrecisionError(f"unsupported dtype {dtype}")


_state = {"grad_enabled": True}
_mac_counters: list = []


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    prev = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = prev


def is_grad_enabled() -> bool:
    return _state["grad_enabled"]


class MacCounter:
    """Accumulates multiply-accumulate counts of executed matmuls."""

    def __init__(self):
        self.total = 0
        self.calls = []

    def add(self, op: str, macs: int):
        self.total += macs
        self.calls.append((op, macs))


@contextlib.contextmanager
def count_macs():
    counter = MacCounter()
    _mac_counters.append(counter)
    try:
        yield counter
    finally:
        _mac_counters.remove(counter)


def record_macs(op: str, macs: int):
    for c in _mac_counters:
        c.add(op, int(macs))


def check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{op} produced non-finite values")
    return arr


def _as_float_array(data, dtype=None) -> np.ndarray:
    if dtype is not None:
        return np.array(data, dtype=np.dtype(dtype))
    arr = np.array(data)
    if arr.dtype != np.float32:
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """Row-major float32/float64 array with optional gradient tracking.

    The wrapped buffer is never written after construction, so tensors may be
    shared read-only between threads.
    """

    __slots__ = ("data", "requires_grad", "name", "op", "_parents", "_backward", "__weakref__")

    def __init__(self, data, dtype=None, requires_grad: bool = False, name: Optional[str] = None):
        arr = _as_float_array(data, dtype)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self._init(arr, requires_grad, name)

    def _init(self, arr, requires_grad, name, op="leaf", parents=(), backward_fn=None):
        Precision.of(arr.dtype)
        if any(d < 1 for d in arr.shape):
            raise ShapeError(f"dimension sizes must be >= 1, got {arr.shape}")
        check_finite(arr, op)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self.op = op
        self._parents = parents
        self._backward = backward_fn

    @classmethod
    def wrap(cls, arr: np.ndarray, requires_grad: bool = False, name: Optional[str] = None) -> "Tensor":
        """Adopt ``arr`` without copying. The caller gives up write access."""
        t = cls.__new__(cls)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        t._init(arr, requires_grad, name)
        return t

    @classmethod
    def from_op(cls, arr: np.ndarray, op: str, parents: Sequence["Tensor"],
                backward_fn: Callable[[np.ndarray], tuple]) -> "Tensor":
        t = cls.__new__(cls)
        track = is_grad_enabled() and any(p.requires_grad for p in parents)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        t._init(np.ascontiguousarray(arr), track, None, op,
                tuple(parents) if track else (), backward_fn if track else None)
        return t

    # properties
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def precision(self) -> Precision:
        return Precision.of(self.data.dtype)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor.wrap(self.data)

    def astype(self, precision: Precision) -> "Tensor":
        from . import ops
        return ops.cast(self, precision)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, precision={self.precision.name}{label})"

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def permute(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.permute(self, axes)

    def sum(self):
        from . import ops
        return ops.sum(self)


def _topo_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Optional[Iterable[Tensor]] = None) -> dict:
    """Differentiate a scalar ``loss`` with respect to every leaf on its tape.

    Args:
        loss: single-element tensor produced with recording enabled.
        params: optional leaves to report; those not on the path to ``loss``
            get zero gradients.

    Returns:
        dict mapping each leaf tensor (by identity) to its gradient tensor.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                leaves[node] = g
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if pg.shape != p.shape:
                raise ShapeError(f"{node.op}: gradient shape {pg.shape} != input shape {p.shape}")
            key = id(p)
            grads[key] = pg if key not in grads else grads[key] + pg
    out = {t: Tensor.wrap(check_finite(np.asarray(g, dtype=t.dtype), "backward")) for t, g in leaves.items()}
    if params is not None:
        for p in params:
            if p not in out:
                out[p] = Tensor.wrap(np.zeros_like(p.data))
    return out
