"""Brute-force references for checking the main code paths.

Nothing here imports the tensor engine or the window/attention modules: every
reference works on plain numpy arrays (float64) or Python scalars, with loops
where the main path vectorises.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np


@dataclass
class OracleReport:
    case: str
    max_abs: float
    max_rel: float
    tolerance: float
    metric: str = "abs"

    @property
    def passed(self) -> bool:
        value = self.max_abs if self.metric == "abs" else self.max_rel
        return bool(value <= self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}  {self.case:<44} max_abs={self.max_abs:.3e} max_rel={self.max_rel:.3e} "
                f"tol({self.metric})={self.tolerance:.1e}")


def diff_report(case: str, got, expected, tolerance: float, metric: str = "abs") -> OracleReport:
    got = np.asarray(got, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    if got.shape != expected.shape:
        return OracleReport(case, math.inf, math.inf, tolerance, metric)
    err = np.abs(got - expected)
    scale = np.maximum(np.abs(got), np.abs(expected))
    rel = np.where(scale > 0, err / np.where(scale > 0, scale, 1.0), 0.0)
    return OracleReport(case, float(err.max(initial=0.0)), float(rel.max(initial=0.0)), tolerance, metric)


# ---------------------------------------------------------------- scalars

def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def gelu_scalar(x: float) -> float:
    return x * normal_cdf(x)


def softmax_list(values: Sequence[float]) -> list:
    m = max(values)
    e = [math.exp(v - m) for v in values]
    s = math.fsum(e)
    return [v / s for v in e]


# ---------------------------------------------------------------- attention

def dense_msa(tokens, w_qkv, heads: int, bias=None, b_qkv=None) -> np.ndarray:
    """Plain multi-head self-attention over ``N`` tokens, loop by loop.

    Args:
        tokens: ``N x C`` inputs.
        w_qkv: ``C x 3C`` projection (query, key, value blocks in that order).
        heads: head count; head ``j`` uses channels ``[j*d, (j+1)*d)``.
        bias: optional ``heads x N x N`` additive logits.
        b_qkv: optional ``3C`` projection bias.

    Returns:
        ``N x C`` concatenated head outputs (no output projection).
    """
    x = np.asarray(tokens, dtype=np.float64)
    N, C = x.shape
    if N > 256:
        raise ValueError("dense_msa is meant for N <= 256")
    w = np.asarray(w_qkv, dtype=np.float64)
    b = np.zeros(3 * C) if b_qkv is None else np.asarray(b_qkv, dtype=np.float64)
    d = C // heads
    qkv = [[math.fsum(x[t, c] * w[c, o] for c in range(C)) + b[o] for o in range(3 * C)] for t in range(N)]
    out = np.zeros((N, C))
    scale = 1.0 / math.sqrt(d)
    for j in range(heads):
        for i in range(N):
            logits = []
            for t in range(N):
                s = math.fsum(qkv[i][j * d + e] * qkv[t][C + j * d + e] for e in range(d)) * scale
                if bias is not None:
                    s += float(bias[j][i][t])
                logits.append(s)
            p = softmax_list(logits)
            for e in range(d):
                out[i, j * d + e] = math.fsum(p[t] * qkv[t][2 * C + j * d + e] for t in range(N))
    return out


def brute_rel_pos(M: int) -> np.ndarray:
    """Relative-position table index by direct enumeration of coordinate pairs."""
    if not 1 <= M <= 8:
        raise ValueError("brute_rel_pos supports 1 <= M <= 8")
    side = 2 * M - 1
    out = np.zeros((M * M, M * M), dtype=np.int64)
    for p in range(M * M):
        py, px = divmod(p, M)
        for q in range(M * M):
            qy, qx = divmod(q, M)
            out[p, q] = (py - qy + M - 1) * side + (px - qx + M - 1)
    return out


def _band(i: int, size: int, win: int, shift: int) -> int:
    if i < size - win:
        return 0
    if i < size - shift:
        return 1
    return 2


def windowed_attention_reference(q, k, v, heads: int, win: int, shift: int = 0,
                                 bias_table=None) -> np.ndarray:
    """Window attention computed token by token from coordinates.

    Pads bottom/right with zeros, rolls the padded map toward the upper left by
    ``shift``, lets each query see the keys of its own window that came from the
    same unshifted region, and maps results back.
    """
    q, k, v = (np.asarray(a, dtype=np.float64) for a in (q, k, v))
    H, W, width = q.shape
    d = width // heads
    Hp, Wp = -(-H // win) * win, -(-W // win) * win

    def padded(a):
        out = np.zeros((Hp, Wp, width))
        out[:H, :W] = a
        return out

    qp, kp, vp = padded(q), padded(k), padded(v)
    # value at shifted position (i, j) comes from padded position ((i+shift) % Hp, (j+shift) % Wp)
    src = lambda i, j: ((i + shift) % Hp, (j + shift) % Wp)
    result = np.zeros((Hp, Wp, width))
    side = 2 * win - 1
    for i in range(Hp):
        for j in range(Wp):
            wy, wx = i // win, j // win
            keys = [(a, b) for a in range(wy * win, wy * win + win) for b in range(wx * win, wx * win + win)]
            if shift:
                region = (_band(i, Hp, win, shift), _band(j, Wp, win, shift))
                allowed = [(_band(a, Hp, win, shift), _band(b, Wp, win, shift)) == region for a, b in keys]
            else:
                allowed = [True] * len(keys)
            si, sj = src(i, j)
            for h in range(heads):
                sl = slice(h * d, (h + 1) * d)
                logits = []
                for (a, b), ok in zip(keys, allowed):
                    sa, sb = src(a, b)
                    s = float(np.dot(qp[si, sj, sl], kp[sa, sb, sl])) / math.sqrt(d)
                    if bias_table is not None:
                        s += float(bias_table[(i - a + win - 1) * side + (j - b + win - 1)][h])
                    if not ok:
                        s += -1e9
                    logits.append(s)
                p = softmax_list(logits)
                acc = np.zeros(d)
                for (a, b), pt in zip(keys, p):
                    sa, sb = src(a, b)
                    acc += pt * vp[sa, sb, sl]
                result[si, sj, sl] = acc
    return result[:H, :W]


# ---------------------------------------------------------------- dense layers

def linear_ref(x, w, b=None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.einsum("...i,io->...o", x, np.asarray(w, dtype=np.float64))
    return out if b is None else out + np.asarray(b, dtype=np.float64)


def gelu_ref(x) -> np.ndarray:
    return np.vectorize(gelu_scalar, otypes=[np.float64])(np.asarray(x, dtype=np.float64))


def layer_norm_ref(x, gamma, beta, eps: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    mu = x.sum(axis=-1, keepdims=True) / x.shape[-1]
    var = ((x - mu) ** 2).sum(axis=-1, keepdims=True) / x.shape[-1]
    return (x - mu) / np.sqrt(var + eps) * np.asarray(gamma, np.float64) + np.asarray(beta, np.float64)


def fuse_reference(y_msw, w: dict):
    """Straight-line Fuse step from raw weight arrays (keys ``ffc1.weight`` ...)."""
    y_hat = linear_ref(y_msw, w["ffc1.weight"], w["ffc1.bias"])
    g = gelu_ref(y_hat)
    pooled = g.reshape(-1, g.shape[-1]).sum(axis=0) / (g.shape[0] * g.shape[1])
    y_fuse = gelu_ref(linear_ref(pooled, w["ffc2.weight"], w["ffc2.bias"]))
    return y_hat, y_fuse.reshape(1, 1, -1)


def alpha_reference(y_fuse, w: dict, n_win: int) -> np.ndarray:
    code = np.asarray(y_fuse, dtype=np.float64).reshape(-1)
    logits = [linear_ref(code, w[f"falpha.{i}.weight"], w[f"falpha.{i}.bias"]) for i in range(n_win)]
    cb = logits[0].shape[0]
    alpha = np.zeros((n_win, cb))
    for c in range(cb):
        col = softmax_list([float(logits[i][c]) for i in range(n_win)])
        for i in range(n_win):
            alpha[i, c] = col[i]
    return alpha


def select_reference(branches, alpha, w: dict) -> np.ndarray:
    acc = None
    for i, b in enumerate(branches):
        term = np.asarray(b, dtype=np.float64) * np.asarray(alpha, dtype=np.float64)[i]
        acc = term if acc is None else acc + term
    return linear_ref(linear_ref(acc, w["ffc3.weight"], w["ffc3.bias"]), w["ffc4.weight"], w["ffc4.bias"])


def patch_gather_reference(image, patch: int) -> np.ndarray:
    """Concatenate each ``patch x patch`` block to one vector, (row, col, channel) order."""
    image = np.asarray(image, dtype=np.float64)
    H, W, c = image.shape
    out = np.zeros((H // patch, W // patch, patch * patch * c))
    for i in range(H // patch):
        for j in range(W // patch):
            vec = []
            for dy in range(patch):
                for dx in range(patch):
                    vec.extend(image[i * patch + dy, j * patch + dx])
            out[i, j] = vec
    return out


def _pad_even(x, multiple: int) -> np.ndarray:
    H, W, c = x.shape
    out = np.zeros((-(-H // multiple) * multiple, -(-W // multiple) * multiple, c))
    out[:H, :W] = x
    return out


def _block_reference(z, w: dict, prefix: str, heads: int, windows, mode: str, shifted: bool):
    get = lambda k: w[f"{prefix}.{k}"]
    H, W, C = z.shape
    n = len(windows)
    hb, cb = heads // n, C // n
    x = layer_norm_ref(z, get("norm1.weight"), get("norm1.bias"))
    qkv = linear_ref(x, get("dwm.attn.qkv.weight"), get("dwm.attn.qkv.bias"))
    branches = []
    for i, win in enumerate(windows):
        shift = win // 2 if shifted and win < min(H, W) else 0
        q, k, v = (qkv[..., j * C + i * cb: j * C + (i + 1) * cb] for j in range(3))
        branches.append(windowed_attention_reference(q, k, v, hb, win, shift,
                                                     get(f"dwm.attn.bias_tables.{i}")))
    y_msw = np.concatenate(branches, axis=-1)
    d = {k[len(prefix) + len(".dwm.dmsw."):]: v for k, v in w.items() if k.startswith(f"{prefix}.dwm.dmsw.")}
    if mode == "off":
        out = linear_ref(y_msw, d["ffc1.weight"], d["ffc1.bias"])
    else:
        if mode == "dynamic":
            y_hat, y_fuse = fuse_reference(y_msw, d)
            alpha = alpha_reference(y_fuse, d, n)
        else:
            y_hat = linear_ref(y_msw, d["ffc1.weight"], d["ffc1.bias"])
            alpha = np.full((n, cb), 1.0 / n)
        out = select_reference(branches, alpha, d) + y_hat
    z_hat = out + z
    h = layer_norm_ref(z_hat, get("norm2.weight"), get("norm2.bias"))
    h = gelu_ref(linear_ref(h, get("mlp.fc1.weight"), get("mlp.fc1.bias")))
    return linear_ref(h, get("mlp.fc2.weight"), get("mlp.fc2.bias")) + z_hat


def backbone_reference(image, w: dict, stages, mode: str = "dynamic") -> np.ndarray:
    """Whole-network logits composed from the straight-line pieces above.

    Args:
        image: ``H x W x c`` array.
        w: parameter arrays keyed by dotted parameter name.
        stages: sequence of ``(heads, effective_windows, depth)`` per stage.
        mode: ``"dynamic"``, ``"equal"`` or ``"off"``.
    """
    x = patch_gather_reference(_pad_even(np.asarray(image, dtype=np.float64), 4), 4)
    x = linear_ref(x, w["patch_embed.proj.weight"], w["patch_embed.proj.bias"])
    x = layer_norm_ref(x, w["patch_embed.norm.weight"], w["patch_embed.norm.bias"])
    for s, (heads, windows, depth) in enumerate(stages):
        if s:
            m = f"stages.{s}.merge"
            x = patch_gather_reference(_pad_even(x, 2), 2)
            x = linear_ref(layer_norm_ref(x, w[f"{m}.norm.weight"], w[f"{m}.norm.bias"]),
                           w[f"{m}.reduction.weight"])
        for j in range(depth):
            x = _block_reference(x, w, f"stages.{s}.blocks.{j}", heads, windows, mode, j % 2 == 1)
    x = layer_norm_ref(x, w["head.norm.weight"], w["head.norm.bias"])
    pooled = x.reshape(-1, x.shape[-1]).sum(axis=0) / (x.shape[0] * x.shape[1])
    return linear_ref(pooled, w["head.fc.weight"], w["head.fc.bias"])


# ---------------------------------------------------------------- gradients

def finite_diff_grad(f: Callable[[np.ndarray], float], theta, epsilon: float = 1e-5,
                     indices: Optional[Sequence[int]] = None) -> np.ndarray:
    """Central differences ``(f(t + e) - f(t - e)) / 2e`` at the requested flat indices."""
    theta = np.array(theta, dtype=np.float64).reshape(-1)
    idx = range(theta.size) if indices is None else indices
    out = []
    for i in idx:
        old = theta[i]
        theta[i] = old + epsilon
        up = f(theta.copy())
        theta[i] = old - epsilon
        down = f(theta.copy())
        theta[i] = old
        if not (math.isfinite(up) and math.isfinite(down)):
            raise FloatingPointError(f"non-finite objective near coordinate {i}")
        out.append((up - down) / (2.0 * epsilon))
    return np.asarray(out)
