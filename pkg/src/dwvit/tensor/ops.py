"""Differentiable primitives over :class:`~dwvit.tensor.core.Tensor`.

Every op validates shapes, computes the forward value with numpy, and (when
recording) attaches a closure returning one gradient per input.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.special import erf

from .core import PrecisionError, Precision, ShapeError, Tensor, record_macs

_SQRT_HALF = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _pair(a, b):
    a_is, b_is = isinstance(a, Tensor), isinstance(b, Tensor)
    if a_is and b_is:
        if a.dtype != b.dtype:
            raise PrecisionError(f"precision mismatch: {a.precision.name} vs {b.precision.name}")
        return a, b
    if a_is:
        return a, as_tensor(b, like=a)
    if b_is:
        return as_tensor(a, like=b), b
    return as_tensor(a), as_tensor(b)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` over broadcast axes."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _norm_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"axis {axis} out of range for rank {ndim}")
    return axis % ndim


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    try:
        out = a.data + b.data
    except ValueError as e:
        raise ShapeError(str(e)) from None
    return Tensor.from_op(out, "add", (a, b),
                          lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    try:
        out = a.data - b.data
    except ValueError as e:
        raise ShapeError(str(e)) from None
    return Tensor.from_op(out, "sub", (a, b),
                          lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    try:
        out = a.data * b.data
    except ValueError as e:
        raise ShapeError(str(e)) from None
    return Tensor.from_op(out, "mul", (a, b),
                          lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    try:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = a.data / b.data
    except ValueError as e:
        raise ShapeError(str(e)) from None

    def back(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return Tensor.from_op(out, "div", (a, b), back)


def neg(x: Tensor) -> Tensor:
    return Tensor.from_op(-x.data, "neg", (x,), lambda g: (-g,))


def cast(x: Tensor, precision: Precision) -> Tensor:
    src = x.dtype
    return Tensor.from_op(x.data.astype(precision.dtype), "cast", (x,), lambda g: (g.astype(src),))


def gelu(x: Tensor) -> Tensor:
    """x * Phi(x) with the exact error-function CDF."""
    cdf = 0.5 * (1.0 + erf(x.data * _SQRT_HALF))
    out = x.data * cdf

    def back(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return Tensor.from_op(out.astype(x.dtype), "gelu", (x,), back)


# ---------------------------------------------------------------- reductions

def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    out = np.asarray(x.data.sum(), dtype=x.dtype)
    return Tensor.from_op(out, "sum", (x,), lambda g: (np.broadcast_to(g.reshape(()), x.shape).copy(),))


def mean(x: Tensor, axis, keepdims: bool = False) -> Tensor:
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(_norm_axis(a, x.ndim) for a in axes)
    count = 1
    for a in axes:
        count *= x.shape[a]
    out = x.data.mean(axis=axes, keepdims=keepdims)

    kept = tuple(1 if i in axes else d for i, d in enumerate(x.shape))

    def back(g):
        return (np.broadcast_to(g.reshape(kept) / count, x.shape).astype(x.dtype),)

    return Tensor.from_op(out, "mean", (x,), back)


def global_avg_pool(x: Tensor) -> Tensor:
    """Channel-wise spatial mean of an ``H x W x C`` map, shaped ``1 x 1 x C``."""
    if x.ndim != 3:
        raise ShapeError(f"global_avg_pool expects H x W x C, got {x.shape}")
    return mean(x, (0, 1), keepdims=True)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _norm_axis(axis, x.ndim)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor.from_op(out, "softmax", (x,), back)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm: channel dim {c} vs gamma {gamma.shape}, beta {beta.shape}")
    if not (x.dtype == gamma.dtype == beta.dtype):
        raise PrecisionError("layer_norm: precision mismatch")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data

    def back(g):
        lead = tuple(range(g.ndim - 1))
        dxhat = g * gamma.data
        dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                     - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor.from_op(out, "layer_norm", (x, gamma, beta), back)


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """(..., m, k) @ (..., k, n) with identical leading dims (or 2-D b)."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch dims differ: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)
    record_macs("matmul", out.size * a.shape[-1])

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        if b.ndim == 2:
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return ga, gb

    return Tensor.from_op(out, "matmul", (a, b), back)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map over the trailing axis: ``x @ weight + bias``.

    ``weight`` is stored ``Cin x Cout``.
    """
    cin, cout = weight.shape
    if x.shape[-1] != cin:
        raise ShapeError(f"linear: input has {x.shape[-1]} channels, weight expects {cin}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"linear: bias shape {bias.shape} != ({cout},)")
    parts = (x, weight) if bias is None else (x, weight, bias)
    if len({p.dtype for p in parts}) != 1:
        raise PrecisionError("linear: precision mismatch")
    flat = x.data.reshape(-1, cin)
    out = flat @ weight.data
    record_macs("linear", flat.shape[0] * cin * cout)
    if bias is not None:
        out = out + bias.data
    out = out.reshape(x.shape[:-1] + (cout,))

    def back(g):
        g2 = g.reshape(-1, cout)
        gx = (g2 @ weight.data.T).reshape(x.shape)
        gw = flat.T @ g2
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return Tensor.from_op(out, "linear", parts, back)


# ---------------------------------------------------------------- movement

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(str(e)) from None
    return Tensor.from_op(out, "reshape", (x,), lambda g: (g.reshape(x.shape),))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"permute axes {axes} invalid for rank {x.ndim}")
    inv = tuple(np.argsort(axes))
    return Tensor.from_op(np.transpose(x.data, axes), "permute", (x,),
                          lambda g: (np.transpose(g, inv),))


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    if not parts:
        raise ShapeError("concat of an empty list")
    ndim = parts[0].ndim
    axis = _norm_axis(axis, ndim)
    for p in parts:
        if p.dtype != parts[0].dtype:
            raise PrecisionError("concat: precision mismatch")
        if p.ndim != ndim or any(p.shape[i] != parts[0].shape[i] for i in range(ndim) if i != axis):
            raise ShapeError(f"concat: ragged shapes {[q.shape for q in parts]} on axis {axis}")
    out = np.concatenate([p.data for p in parts], axis=axis)
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]
    return Tensor.from_op(out, "concat", tuple(parts),
                          lambda g: tuple(np.split(g, bounds, axis=axis)))


def slice_axis(x: Tensor, start: int, stop: int, axis: int) -> Tensor:
    axis = _norm_axis(axis, x.ndim)
    if not 0 <= start < stop <= x.shape[axis]:
        raise ShapeError(f"slice [{start}:{stop}] out of range for axis size {x.shape[axis]}")
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def back(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[index] = g
        return (full,)

    return Tensor.from_op(x.data[index], "slice", (x,), back)


def split(x: Tensor, axis: int, n: int) -> list:
    """Split into ``n`` equal consecutive pieces along ``axis``."""
    axis = _norm_axis(axis, x.ndim)
    size = x.shape[axis]
    if n < 1 or size % n:
        raise ShapeError(f"cannot split axis of size {size} into {n} equal parts")
    step = size // n
    return [slice_axis(x, i * step, (i + 1) * step, axis) for i in range(n)]


def roll(x: Tensor, shifts: Sequence[int], axes: Sequence[int]) -> Tensor:
    shifts, axes = tuple(shifts), tuple(axes)
    back_shifts = tuple(-s for s in shifts)
    return Tensor.from_op(np.roll(x.data, shifts, axes), "roll", (x,),
                          lambda g: (np.roll(g, back_shifts, axes),))


def pad(x: Tensor, widths: Sequence[tuple]) -> Tensor:
    """Zero padding; ``widths`` holds one ``(before, after)`` pair per axis."""
    widths = tuple((int(a), int(b)) for a, b in widths)
    if len(widths) != x.ndim:
        raise ShapeError(f"pad widths for {len(widths)} axes, tensor has {x.ndim}")
    if all(w == (0, 0) for w in widths):
        return x
    index = tuple(slice(a, a + d) for (a, _), d in zip(widths, x.shape))
    return Tensor.from_op(np.pad(x.data, widths), "pad", (x,), lambda g: (g[index],))


def crop(x: Tensor, sizes: Sequence[int]) -> Tensor:
    """Keep the leading ``sizes[i]`` entries of each axis."""
    sizes = tuple(sizes)
    if len(sizes) != x.ndim or any(not 1 <= s <= d for s, d in zip(sizes, x.shape)):
        raise ShapeError(f"crop sizes {sizes} invalid for shape {x.shape}")
    if sizes == x.shape:
        return x
    index = tuple(slice(0, s) for s in sizes)

    def back(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[index] = g
        return (full,)

    return Tensor.from_op(x.data[index], "crop", (x,), back)


def take(table: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows of ``table``: result shape is ``index.shape + table.shape[1:]``."""
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise ShapeError(f"take: index out of range for table with {table.shape[0]} rows")
    flat = index.reshape(-1)

    def back(g):
        full = np.zeros(table.shape, dtype=g.dtype)
        np.add.at(full, flat, g.reshape((flat.size,) + table.shape[1:]))
        return (full,)

    return Tensor.from_op(table.data[index], "take", (table,), back)
