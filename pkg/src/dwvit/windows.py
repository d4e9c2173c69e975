"""Spatial window machinery on ``H x W x C`` maps.

Windows and the tokens inside each window are ordered row-major everywhere.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import ShapeError, Tensor, ops

MASK_VALUE = -1e9


@dataclass(frozen=True)
class WindowSet:
    """Nominal window sizes for one stage and their clamped (effective) sizes."""

    nominal: tuple
    effective: tuple

    def __post_init__(self):
        if not self.nominal:
            raise ValueError("window list must be non-empty")
        if any(int(w) < 1 for w in self.nominal):
            raise ValueError(f"window sizes must be positive, got {self.nominal}")
        if len(self.effective) != len(self.nominal):
            raise ValueError("nominal and effective window lists differ in length")

    @classmethod
    def of(cls, windows: Sequence[int]) -> "WindowSet":
        w = tuple(int(v) for v in windows)
        return cls(w, w)

    @property
    def n_win(self) -> int:
        return len(self.nominal)


def clamp_windows(nominal, feature_h: int, feature_w: int) -> WindowSet:
    """Clamp each window to the feature extent (global attention past that point)."""
    sizes = nominal.nominal if isinstance(nominal, WindowSet) else tuple(int(v) for v in nominal)
    return WindowSet(sizes, tuple(min(w, feature_h, feature_w) for w in sizes))


def window_partition(x: Tensor, win: int) -> Tensor:
    """``H x W x C`` -> ``nW x win*win x C``."""
    H, W, C = x.shape
    if H % win or W % win:
        raise ShapeError(f"{H}x{W} map is not divisible by window {win}; pad first")
    t = ops.reshape(x, (H // win, win, W // win, win, C))
    t = ops.permute(t, (0, 2, 1, 3, 4))
    return ops.reshape(t, ((H // win) * (W // win), win * win, C))


def window_reverse(windows: Tensor, H: int, W: int) -> Tensor:
    """Inverse of :func:`window_partition`."""
    nW, n, C = windows.shape
    win = int(round(n ** 0.5))
    if win * win != n or nW * n != H * W or H % win or W % win:
        raise ShapeError(f"windows of shape {windows.shape} cannot tile a {H}x{W} map")
    t = ops.reshape(windows, (H // win, W // win, win, win, C))
    t = ops.permute(t, (0, 2, 1, 3, 4))
    return ops.reshape(t, (H, W, C))


def cyclic_shift(x: Tensor, dy: int, dx: int) -> Tensor:
    """Toroidal roll of the spatial grid; ``out[i, j] = x[i - dy, j - dx]``."""
    H, W = x.shape[:2]
    dy, dx = dy % H, dx % W
    if dy == 0 and dx == 0:
        return x
    return ops.roll(x, (dy, dx), (0, 1))


@dataclass(frozen=True)
class PadRecord:
    height: int
    width: int
    pad_h: int
    pad_w: int


def pad_to_multiple(x: Tensor, win: int):
    """Zero-pad bottom/right to the least multiples of ``win``."""
    H, W = x.shape[:2]
    ph, pw = (-H) % win, (-W) % win
    widths = [(0, ph), (0, pw)] + [(0, 0)] * (x.ndim - 2)
    return ops.pad(x, widths), PadRecord(H, W, ph, pw)


def crop(x: Tensor, record: PadRecord) -> Tensor:
    return ops.crop(x, (record.height, record.width) + x.shape[2:])


def rel_pos_index(M: int) -> np.ndarray:
    """Bias-table index for every token pair of an ``M x M`` window, shape ``M^2 x M^2``."""
    if M < 1:
        raise ValueError("window size must be >= 1")
    ys, xs = np.meshgrid(np.arange(M), np.arange(M), indexing="ij")
    ys, xs = ys.reshape(-1), xs.reshape(-1)
    dy = ys[:, None] - ys[None, :] + (M - 1)
    dx = xs[:, None] - xs[None, :] + (M - 1)
    return dy * (2 * M - 1) + dx


def shift_attention_mask(H: int, W: int, win: int, shift: int, dtype=np.float32) -> np.ndarray:
    """Additive ``nW x win^2 x win^2`` mask for attention after a cyclic shift.

    Tokens may attend to each other only if they came from the same contiguous
    region of the unshifted map.
    """
    if not 0 <= shift < win:
        raise ValueError(f"shift {shift} must satisfy 0 <= shift < win={win}")
    if H % win or W % win:
        raise ShapeError(f"{H}x{W} map is not divisible by window {win}")
    nW = (H // win) * (W // win)
    if shift == 0:
        return np.zeros((nW, win * win, win * win), dtype=dtype)
    labels = np.zeros((H, W), dtype=np.int64)
    bands = (slice(0, -win), slice(-win, -shift), slice(-shift, None))
    region = 0
    for hs in bands:
        for ws in bands:
            labels[hs, ws] = region
            region += 1
    lw = labels.reshape(H // win, win, W // win, win).transpose(0, 2, 1, 3).reshape(nW, win * win)
    same = lw[:, :, None] == lw[:, None, :]
    return np.where(same, 0.0, MASK_VALUE).astype(dtype)
