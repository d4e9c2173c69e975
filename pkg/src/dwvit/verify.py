"""Verification suites behind ``dwvit gradcheck`` and ``dwvit selftest``."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import oracle
from .analyzer import compare, count_flops
from .attention import WindowAttention, wmsa_branch
from .dwm import DmswMode, DmswParams, DynamicWindowModule, fuse, select, select_weights
from .model import ModelConfig, build_model, dw_b, dw_t, toy_config
from .nn import Initializer
from .tensor import Precision, Tensor, backward, no_grad, ops
from .windows import (
    WindowSet,
    crop,
    cyclic_shift,
    pad_to_multiple,
    rel_pos_index,
    window_partition,
    window_reverse,
)


def randomize_parameters(model, rng: np.random.Generator) -> None:
    """Move every parameter to a generic point so no gradient is trivially zero."""
    for name, p in model.named_parameters():
        if p.ndim == 2 and "bias_tables" not in name:
            data = rng.normal(0.0, 0.5 / math.sqrt(p.shape[0]), p.shape)
        elif name.endswith("norm.weight") or name.endswith("norm1.weight") or name.endswith("norm2.weight"):
            data = 1.0 + 0.1 * rng.standard_normal(p.shape)
        else:
            data = 0.3 * rng.standard_normal(p.shape)
        model.set_parameter(name, Tensor.wrap(data.astype(p.dtype)))


@dataclass
class GradcheckResult:
    reports: list = field(default_factory=list)
    num_parameters: int = 0

    @property
    def max_rel(self) -> float:
        return max((r.max_rel for r in self.reports), default=0.0)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)


def gradcheck(seed: int = 0, samples: int = 100, epsilon: float = 1e-5, tolerance: float = 1e-6,
              cfg: ModelConfig | None = None) -> GradcheckResult:
    """Compare tape gradients of ``sum(logits)`` with central differences in F64.

    Parameters are sampled uniformly over all scalar entries of the model.
    """
    cfg = cfg or toy_config()
    model = build_model(cfg, seed=seed, precision=Precision.F64)
    rng = np.random.default_rng(seed)
    randomize_parameters(model, rng)
    image = Tensor(rng.standard_normal(tuple(cfg.image_size) + (cfg.in_channels,)))
    named = list(model.named_parameters())
    grads = backward(ops.sum(model(image)), [p for _, p in named])
    result = GradcheckResult(num_parameters=sum(p.size for _, p in named))
    if samples <= 0:
        return result
    offsets = np.cumsum([0] + [p.size for _, p in named])
    picks = rng.choice(offsets[-1], size=min(samples, offsets[-1]), replace=False)
    for flat in sorted(int(v) for v in picks):
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        name, param = named[k]
        local = flat - offsets[k]

        def objective(theta, name=name, shape=param.shape):
            model.set_parameter(name, Tensor.wrap(theta.reshape(shape)))
            with no_grad():
                return ops.sum(model(image)).item()

        numeric = oracle.finite_diff_grad(objective, param.data, epsilon, [local])[0]
        model.set_parameter(name, param)
        analytic = float(grads[param].data.reshape(-1)[local])
        result.reports.append(oracle.diff_report(f"grad {name}[{local}]", analytic, numeric, tolerance, "rel"))
    return result


# ---------------------------------------------------------------- selftest

def _check(case, ok: bool) -> oracle.OracleReport:
    return oracle.OracleReport(case, 0.0 if ok else math.inf, 0.0 if ok else math.inf, 0.0)


def selftest(seed: int = 0) -> list:
    """Desk-scale oracle and invariant suite; returns one report per case."""
    rng = np.random.default_rng(seed)
    reports = []

    rows = rng.normal(0, 5, (1000, 9))
    s = ops.softmax(Tensor(rows), -1).data.sum(-1)
    reports.append(oracle.diff_report("softmax rows sum to 1 (1000 rows)", s, np.ones(1000), 1e-12))

    reports.append(_check("rel_pos_index == brute force, M=1..7",
                          all(np.array_equal(rel_pos_index(m), oracle.brute_rel_pos(m)) for m in range(1, 8))))

    ok = True
    for H in range(4, 29, 3):
        for W in range(4, 29, 5):
            x = Tensor(rng.standard_normal((H, W, 3)), dtype=np.float32)
            for win in (2, 4, 7):
                xp, rec = pad_to_multiple(x, win)
                ok &= np.array_equal(window_reverse(window_partition(xp, win), *xp.shape[:2]).data, xp.data)
                ok &= np.array_equal(crop(xp, rec).data, x.data)
            ok &= np.array_equal(cyclic_shift(cyclic_shift(x, -3, -2), 3, 2).data, x.data)
    reports.append(_check("partition/shift/pad roundtrips bit-exact", ok))

    for case in range(3):
        side, heads, d = 3, 2, 4
        C = heads * d
        x = rng.standard_normal((side * side, C))
        w = rng.standard_normal((C, 3 * C)) * 0.5
        qkv = (x @ w).astype(np.float32)
        q, k, v = (Tensor(qkv[:, i * C:(i + 1) * C].reshape(side, side, C)) for i in range(3))
        got = wmsa_branch(q, k, v, heads, side, 0, None).data.reshape(side * side, C)
        reports.append(oracle.diff_report(f"window attention == dense MSA #{case}", got,
                                          oracle.dense_msa(x, w, heads), 1e-5))

    H, W, heads, win, shift = 6, 6, 2, 3, 1
    q, k, v = (rng.standard_normal((H, W, heads * 4)) for _ in range(3))
    table = rng.standard_normal(((2 * win - 1) ** 2, heads))
    got = wmsa_branch(Tensor(q), Tensor(k), Tensor(v), heads, win, shift, Tensor(table)).data
    ref = oracle.windowed_attention_reference(q, k, v, heads, win, shift, table)
    reports.append(oracle.diff_report("shifted window attention == coordinate oracle", got, ref, 1e-10))

    init = Initializer(seed, Precision.F64)
    p = DmswParams(init, 24, 3, DmswMode.DYNAMIC, "d")
    randomize_parameters(p, rng)
    y = rng.standard_normal((5, 5, 24))
    weights = {n: t.data for n, t in p.named_parameters()}
    y_hat, y_fuse = fuse(Tensor(y), p)
    ref_hat, ref_fuse = oracle.fuse_reference(y, weights)
    reports.append(oracle.diff_report("fuse == straight-line oracle", y_fuse.data, ref_fuse, 1e-10))
    alpha = select_weights(y_fuse, p)
    reports.append(oracle.diff_report("alpha == per-channel softmax oracle", alpha.data,
                                      oracle.alpha_reference(ref_fuse, weights, 3), 1e-10))
    branches = [rng.standard_normal((5, 5, 8)) for _ in range(3)]
    got = select([Tensor(b) for b in branches], alpha, p).data
    reports.append(oracle.diff_report("select == straight-line oracle", got,
                                      oracle.select_reference(branches, alpha.data, weights), 1e-10))

    ok = True
    for cfg in (dw_t(), dw_b()):
        ok &= all(c.matches for c in compare(count_flops(cfg)))
    reports.append(_check("per-block FLOPs == closed form (DW-T, DW-B)", ok))

    init = Initializer(seed)
    ref = WindowAttention(init, 96, 3, 7, "ref")
    dwm = DynamicWindowModule(init, 96, 3, WindowSet.of([7]), DmswMode.OFF, "dwm")
    dwm.attn.set_parameter("qkv.weight", ref.qkv.weight)
    dwm.attn.set_parameter("qkv.bias", ref.qkv.bias)
    dwm.dmsw.set_parameter("ffc1.weight", ref.proj.weight)
    dwm.dmsw.set_parameter("ffc1.bias", ref.proj.bias)
    x = Tensor(rng.standard_normal((14, 14, 96)), dtype=np.float32)
    reports.append(_check("n_win=1 Off-mode == single-window attention (bit)",
                          np.array_equal(dwm(x).data, ref(x).data)))
    return reports
