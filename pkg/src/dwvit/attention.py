"""Windowed multi-head self-attention and its multi-scale composition.

The heads of one full-width QKV projection are split into ``n_win`` consecutive
groups (branches); branch ``i`` attends inside windows of size ``win_i``.
"""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .nn import Initializer, Linear, Module
from .tensor import ShapeError, Tensor, ops
from .windows import (
    WindowSet,
    cyclic_shift,
    crop,
    pad_to_multiple,
    rel_pos_index,
    shift_attention_mask,
    window_partition,
    window_reverse,
)


def branch_shift(win: int, H: int, W: int, shifted: bool) -> int:
    """Shift used by a branch: ``win // 2`` unless the window already covers the map."""
    if not shifted or win >= min(H, W):
        return 0
    return win // 2


def relative_bias(table: Tensor, win: int) -> Tensor:
    """Gather a ``(2M-1)^2 x heads`` table into ``heads x M^2 x M^2``."""
    if table.shape[0] != (2 * win - 1) ** 2:
        raise ShapeError(f"bias table has {table.shape[0]} rows, window {win} needs {(2 * win - 1) ** 2}")
    return ops.permute(ops.take(table, rel_pos_index(win)), (2, 0, 1))


def wmsa_branch(q: Tensor, k: Tensor, v: Tensor, heads: int, win: int, shift: int,
                bias_table: Optional[Tensor], mask: Optional[np.ndarray] = None,
                weights_out: Optional[list] = None) -> Tensor:
    """Window attention for one branch.

    Args:
        q, k, v: ``H x W x (heads*d)`` projections, heads laid out consecutively.
        heads: number of heads in this branch.
        win: window size; the map is zero-padded bottom/right to a multiple of it.
        shift: cyclic shift applied toward the upper left before partitioning.
        bias_table: ``(2*win-1)^2 x heads`` relative position table, or None.
        mask: optional ``nW x win^2 x win^2`` additive mask; derived from
            ``shift`` when omitted.
        weights_out: if given, the ``nW x heads x win^2 x win^2`` softmax
            weights are appended to it.

    Returns:
        ``H x W x (heads*d)`` attention output.
    """
    H, W, width = q.shape
    if width % heads:
        raise ShapeError(f"{width} channels do not split into {heads} heads")
    d = width // heads
    qp, record = pad_to_multiple(q, win)
    kp, _ = pad_to_multiple(k, win)
    vp, _ = pad_to_multiple(v, win)
    Hp, Wp = qp.shape[:2]
    if shift:
        qp, kp, vp = (cyclic_shift(t, -shift, -shift) for t in (qp, kp, vp))
    n = win * win

    def heads_first(t):
        t = ops.reshape(window_partition(t, win), (-1, n, heads, d))
        return ops.permute(t, (0, 2, 1, 3))

    qw, kw, vw = heads_first(qp), heads_first(kp), heads_first(vp)
    nW = qw.shape[0]
    logits = ops.matmul(qw, ops.permute(kw, (0, 1, 3, 2))) * (1.0 / math.sqrt(d))
    if bias_table is not None:
        logits = logits + ops.reshape(relative_bias(bias_table, win), (1, heads, n, n))
    if mask is None and shift:
        mask = shift_attention_mask(Hp, Wp, win, shift, dtype=q.dtype)
    if mask is not None:
        if mask.shape != (nW, n, n):
            raise ShapeError(f"mask shape {mask.shape} != {(nW, n, n)}")
        logits = logits + Tensor.wrap(np.asarray(mask, dtype=q.dtype).reshape(nW, 1, n, n))
    attn = ops.softmax(logits, axis=-1)
    if weights_out is not None:
        weights_out.append(attn)
    out = ops.matmul(attn, vw)
    out = ops.reshape(ops.permute(out, (0, 2, 1, 3)), (nW, n, width))
    out = window_reverse(out, Hp, Wp)
    if shift:
        out = cyclic_shift(out, shift, shift)
    return crop(out, record)


class MswMsa(Module):
    """Multi-scale window attention: full-width QKV, heads grouped per window size.

    The output projection is not part of this module (it is the first layer of
    the DMSW module that follows).
    """

    def __init__(self, init: Initializer, dim: int, heads: int, windows: WindowSet, name: str):
        n_win = windows.n_win
        if heads % n_win:
            raise ValueError(f"{heads} heads cannot be split evenly into {n_win} window groups")
        if dim % heads:
            raise ValueError(f"dim {dim} is not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.windows = windows
        self.qkv = Linear(init, dim, 3 * dim, f"{name}.qkv")
        hb = heads // n_win
        # zero-initialised relative position tables, one per branch
        self.bias_tables = [init.zeros(((2 * m - 1) ** 2, hb), f"{name}.bias_tables.{i}")
                            for i, m in enumerate(windows.effective)]

    @property
    def n_win(self) -> int:
        return self.windows.n_win

    @property
    def branch_dim(self) -> int:
        return self.dim // self.n_win

    def __call__(self, x: Tensor, shifted: bool = False):
        """Returns ``(y, branch_outputs)``; ``y`` is the channel concat of the branches."""
        H, W, C = x.shape
        if C != self.dim:
            raise ShapeError(f"expected {self.dim} channels, got {C}")
        qkv = self.qkv(x)
        q, k, v = ops.split(qkv, -1, 3)
        hb, cb = self.heads // self.n_win, self.branch_dim
        outputs = []
        for i, win in enumerate(self.windows.effective):
            lo, hi = i * cb, (i + 1) * cb
            qi, ki, vi = (ops.slice_axis(t, lo, hi, -1) for t in (q, k, v))
            shift = branch_shift(win, H, W, shifted)
            outputs.append(wmsa_branch(qi, ki, vi, hb, win, shift, self.bias_tables[i]))
        y = outputs[0] if len(outputs) == 1 else ops.concat(outputs, -1)
        return y, outputs


def msw_msa(x: Tensor, params: MswMsa, shifted: bool = False):
    return params(x, shifted)


class WindowAttention(Module):
    """Single-scale windowed MSA with output projection, in the usual layout.

    Partitions the input first and projects per window; kept as the
    single-window reference the multi-scale path must collapse to.
    """

    def __init__(self, init: Initializer, dim: int, heads: int, win: int, name: str):
        self.dim = dim
        self.heads = heads
        self.win = win
        self.qkv = Linear(init, dim, 3 * dim, f"{name}.qkv")
        self.bias_table = init.zeros(((2 * win - 1) ** 2, heads), f"{name}.bias_table")
        self.proj = Linear(init, dim, dim, f"{name}.proj")

    def __call__(self, x: Tensor, shifted: bool = False) -> Tensor:
        H, W, C = x.shape
        win, heads, d = self.win, self.heads, C // self.heads
        xp, record = pad_to_multiple(x, win)
        Hp, Wp = xp.shape[:2]
        shift = branch_shift(win, H, W, shifted)
        if shift:
            xp = cyclic_shift(xp, -shift, -shift)
        windows = window_partition(xp, win)
        nW, n = windows.shape[0], win * win
        qkv = ops.permute(ops.reshape(self.qkv(windows), (nW, n, 3, heads, d)), (2, 0, 3, 1, 4))
        q, k, v = (ops.reshape(t, (nW, heads, n, d)) for t in ops.split(qkv, 0, 3))
        attn = ops.matmul(q, ops.permute(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(d))
        attn = attn + ops.reshape(relative_bias(self.bias_table, win), (1, heads, n, n))
        if shift:
            mask = shift_attention_mask(Hp, Wp, win, shift, dtype=x.dtype)
            attn = attn + Tensor.wrap(mask.reshape(nW, 1, n, n))
        attn = ops.softmax(attn, -1)
        out = ops.reshape(ops.permute(ops.matmul(attn, v), (0, 2, 1, 3)), (nW, n, C))
        out = window_reverse(self.proj(out), Hp, Wp)
        if shift:
            out = cyclic_shift(out, shift, shift)
        return crop(out, record)
