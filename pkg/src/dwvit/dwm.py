"""Dynamic window module: multi-scale attention followed by dynamic branch weighting."""
from __future__ import annotations

import enum

from .attention import MswMsa
from .nn import Initializer, Linear, Module
from .tensor import ShapeError, Tensor, ops


class DmswMode(enum.Enum):
    DYNAMIC = "dynamic"
    EQUAL = "equal"
    OFF = "off"


class DmswParams(Module):
    """Weighting layers of one block.

    ``ffc1`` (C -> C) is always present: it doubles as the attention output
    projection. ``ffc2`` and ``falpha`` exist only in dynamic mode, ``ffc3``
    and ``ffc4`` in dynamic and equal-weight modes.
    """

    def __init__(self, init: Initializer, dim: int, n_win: int, mode: DmswMode, name: str):
        if dim % (2 * n_win):
            raise ValueError(f"channels {dim} must be divisible by 2*n_win={2 * n_win}")
        self.dim = dim
        self.n_win = n_win
        self.mode = mode
        self.reduced = dim // (2 * n_win)
        cb = dim // n_win
        self.ffc1 = Linear(init, dim, dim, f"{name}.ffc1")
        if mode is DmswMode.DYNAMIC:
            self.ffc2 = Linear(init, dim, self.reduced, f"{name}.ffc2")
            self.falpha = [Linear(init, self.reduced, cb, f"{name}.falpha.{i}") for i in range(n_win)]
        if mode is not DmswMode.OFF:
            self.ffc3 = Linear(init, cb, cb, f"{name}.ffc3")
            self.ffc4 = Linear(init, cb, dim, f"{name}.ffc4")


def fuse(y_msw: Tensor, p: DmswParams):
    """Returns ``(y_hat_fuse, y_fuse)``: the projected map and the ``1 x 1 x C'`` global code."""
    if y_msw.shape[-1] != p.dim:
        raise ShapeError(f"expected {p.dim} channels, got {y_msw.shape[-1]}")
    y_hat = p.ffc1(y_msw)
    y_fuse = ops.gelu(p.ffc2(ops.global_avg_pool(ops.gelu(y_hat))))
    return y_hat, y_fuse


def select_weights(y_fuse: Tensor, p: DmswParams) -> Tensor:
    """Per-branch, per-channel weights ``n_win x (C/n_win)``; softmax runs across branches."""
    if y_fuse.shape != (1, 1, p.reduced):
        raise ShapeError(f"y_fuse must be 1x1x{p.reduced}, got {y_fuse.shape}")
    code = ops.reshape(y_fuse, (1, p.reduced))
    logits = ops.concat([f(code) for f in p.falpha], 0)
    return ops.softmax(logits, axis=0)


def weighted_branch_sum(branch_outputs, alpha: Tensor) -> Tensor:
    total = None
    for i, b in enumerate(branch_outputs):
        term = b * ops.reshape(ops.slice_axis(alpha, i, i + 1, 0), (alpha.shape[1],))
        total = term if total is None else total + term
    return total


def select(branch_outputs, alpha: Tensor, p: DmswParams) -> Tensor:
    """Weight, sum, and restore the channel width of the branch outputs."""
    if len(branch_outputs) != p.n_win or alpha.shape[0] != p.n_win:
        raise ShapeError(f"expected {p.n_win} branches, got {len(branch_outputs)} outputs "
                         f"and {alpha.shape[0]} weight rows")
    return p.ffc4(p.ffc3(weighted_branch_sum(branch_outputs, alpha)))


def equal_weights(p: DmswParams, like: Tensor) -> Tensor:
    n, cb = p.n_win, p.dim // p.n_win
    return ops.as_tensor([[1.0 / n] * cb] * n, like=like)


class DynamicWindowModule(Module):
    """MSW-MSA plus DMSW for one block; ``mode`` fixes the ablation variant."""

    def __init__(self, init: Initializer, dim: int, heads: int, windows, mode: DmswMode, name: str):
        self.mode = mode
        self.attn = MswMsa(init, dim, heads, windows, f"{name}.attn")
        self.dmsw = DmswParams(init, dim, windows.n_win, mode, f"{name}.dmsw")

    @property
    def windows(self):
        return self.attn.windows

    def __call__(self, x: Tensor, shifted: bool = False) -> Tensor:
        return dwm_forward(x, self.attn, self.dmsw, self.mode, shifted)


def dwm_forward(x: Tensor, attn: MswMsa, dmsw: DmswParams, mode: DmswMode, shifted: bool = False) -> Tensor:
    y_msw, branches = attn(x, shifted)
    if mode is DmswMode.OFF:
        return dmsw.ffc1(y_msw)
    if mode is DmswMode.DYNAMIC:
        y_hat, y_fuse = fuse(y_msw, dmsw)
        alpha = select_weights(y_fuse, dmsw)
    else:
        y_hat = dmsw.ffc1(y_msw)
        alpha = equal_weights(dmsw, x)
    return select(branches, alpha, dmsw) + y_hat
