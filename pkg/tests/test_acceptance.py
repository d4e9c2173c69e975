"""Acceptance criteria, one test per criterion.

Each test prints a single ``[PASS]``/``[FAIL]`` line with the measured value
and the tolerance it was held to; the lines are repeated in the pytest summary.
"""
import math
import time

import numpy as np

from dwvit import oracle
from dwvit.analyzer import analyze, compare, count_flops, count_params
from dwvit.attention import WindowAttention, wmsa_branch
from dwvit.dwm import DmswMode, DmswParams, DynamicWindowModule, select_weights
from dwvit.model import ModelConfig, StageConfig, build_model, dw_b, dw_t, swin_t_like, toy_config, trace_config
from dwvit.nn import Initializer
from dwvit.tensor import Precision, Tensor, no_grad, ops
from dwvit.verify import gradcheck, randomize_parameters
from dwvit.windows import (
    WindowSet,
    crop,
    cyclic_shift,
    pad_to_multiple,
    rel_pos_index,
    window_partition,
    window_reverse,
)


def _params(cfg):
    return count_params(build_model(cfg, materialize=False)).total


def _rel(value, anchor):
    return abs(value / anchor - 1)


def test_01_parameter_anchors(criterion):
    t0 = time.perf_counter()
    rows = [
        ("DW-T dynamic", _params(dw_t()), 29.77e6, 0.05),
        ("DW-T equal", _params(dw_t(mode=DmswMode.EQUAL)), 29.05e6, 0.05),
        ("DW-T off multi-window", _params(dw_t(mode=DmswMode.OFF)), 28.33e6, 0.05),
        ("off single window 7", _params(swin_t_like()), 28.29e6, 0.02),
    ]
    elapsed = time.perf_counter() - t0
    ok = all(_rel(v, a) <= tol for _, v, a, tol in rows) and elapsed < 5
    detail = "; ".join(f"{n} {v / 1e6:.2f}M vs {a / 1e6:.2f}M ({_rel(v, a):.1%} <= {tol:.0%})"
                       for n, v, a, tol in rows)
    criterion(1, "parameter anchors", ok, f"{detail}; {elapsed:.2f}s < 5s")


def test_02_flop_anchors(criterion):
    t0 = time.perf_counter()
    rows = [
        ("DW-T dynamic", count_flops(dw_t()).total, 5.18e9, 0.05),
        ("off single window 7", count_flops(swin_t_like()).total, 4.49e9, 0.02),
        ("DW-T off multi-window", count_flops(dw_t(mode=DmswMode.OFF)).total, 5.07e9, 0.05),
        ("DW-B", count_flops(dw_b()).total, 17.0e9, 0.05),
    ]
    dwb_params = _params(dw_b())
    elapsed = time.perf_counter() - t0
    ok = all(_rel(v, a) <= tol for _, v, a, tol in rows) and _rel(dwb_params, 91e6) <= 0.05 and elapsed < 5
    detail = "; ".join(f"{n} {v / 1e9:.3f}G vs {a / 1e9:.2f}G ({_rel(v, a):.1%} <= {tol:.0%})"
                       for n, v, a, tol in rows)
    criterion(2, "FLOP anchors", ok,
              f"{detail}; DW-B params {dwb_params / 1e6:.2f}M vs 91M ({_rel(dwb_params, 91e6):.1%} <= 5%); "
              f"{elapsed:.2f}s < 5s")


def _random_config(rng) -> ModelConfig:
    n_stages = int(rng.integers(1, 5))
    n_win = int(rng.integers(1, 5))
    heads = n_win * int(rng.integers(1, 3))
    head_dim = 2 * int(rng.integers(1, 9))
    windows = tuple(int(w) for w in rng.integers(1, 16, n_win))
    depth = 2 * int(rng.integers(1, 3))
    stages = [StageConfig(heads * head_dim * 2 ** i, heads * 2 ** i, windows, depth) for i in range(n_stages)]
    size = tuple(int(s) for s in rng.integers(24, 161, 2))
    mode = [DmswMode.DYNAMIC, DmswMode.EQUAL, DmswMode.OFF][int(rng.integers(0, 3))]
    cfg = ModelConfig(stages, size, int(rng.integers(2, 50)), mode)
    cfg.validate()
    return cfg


def test_03_closed_form_equality(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    configs = [dw_t(), dw_b()] + [_random_config(rng) for _ in range(20)]
    blocks = mismatched = dynamic_blocks = 0
    for cfg in configs:
        for row in compare(count_flops(cfg)):
            blocks += 1
            dynamic_blocks += row.closed_dmsw is not None
            mismatched += not row.matches
    elapsed = time.perf_counter() - t0
    ok = mismatched == 0 and elapsed < 10
    criterion(3, "closed-form per-block equality", ok,
              f"{blocks} blocks over {len(configs)} configs ({dynamic_blocks} with the selection term), "
              f"{mismatched} integer mismatches; {elapsed:.2f}s < 10s")


def test_04_shape_law(criterion):
    problems = []
    for name, cfg in (("DW-T", dw_t()), ("DW-B", dw_b())):
        entries = trace_config(cfg)
        C = cfg.stages[0].channels
        for i in range(4):
            last = [e for e in entries if e.name.startswith(f"stages.{i}.blocks")][-1]
            want = (224 // (4 * 2 ** i), 224 // (4 * 2 ** i), C * 2 ** i)
            if last.output_shape != want:
                problems.append(f"{name} stage {i + 1}: {last.output_shape} != {want}")
        if entries[-1].output_shape != (1000,):
            problems.append(f"{name} head {entries[-1].output_shape}")
    wins = [e.windows for e in trace_config(dw_t()) if e.name.endswith("blocks.0.dwm")]
    if wins != [(7, 14, 21), (7, 14, 21), (7, 14, 14), (7, 7, 7)]:
        problems.append(f"DW-T windows {wins}")
    criterion(4, "stage shape law", not problems,
              "; ".join(problems) or "DW-T and DW-B stage outputs H/4..H/32 x C..8C, windows [7,14,14]/[7,7,7]")


def test_05_dense_oracle(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst, cases = 0.0, 0
    for _ in range(24):
        side = int(rng.integers(1, 9))
        heads = int(rng.integers(1, 5))
        C = heads * int(rng.integers(1, 9))
        x = rng.standard_normal((side * side, C)).astype(np.float32)
        w = (rng.standard_normal((C, 3 * C)) / math.sqrt(C)).astype(np.float32)
        qkv = ops.linear(Tensor(x.reshape(side, side, C)), Tensor(w))
        q, k, v = ops.split(qkv, -1, 3)
        zero_bias = Tensor(np.zeros(((2 * side - 1) ** 2, heads), np.float32))
        got = wmsa_branch(q, k, v, heads, side, 0, zero_bias).data.reshape(side * side, C)
        worst = max(worst, oracle.diff_report("dense", got, oracle.dense_msa(x, w, heads), 1e-5).max_abs)
        cases += 1
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-5 and cases >= 20 and elapsed < 30
    criterion(5, "window attention vs dense MSA (F32)", ok,
              f"{cases} cases N<=64, max abs diff {worst:.2e} <= 1e-5; {elapsed:.2f}s < 30s")


def test_06_baseline_collapse(criterion):
    rng = np.random.default_rng(6)
    identical = trials = 0
    for seed in range(3):
        init = Initializer(seed)
        ref = WindowAttention(init, 96, 3, 7, "ref")
        dwm = DynamicWindowModule(init, 96, 3, WindowSet.of([7]), DmswMode.OFF, "dwm")
        table = Tensor(rng.standard_normal(ref.bias_table.shape), dtype=np.float32)
        ref.set_parameter("bias_table", table)
        dwm.attn.set_parameter("bias_tables.0", table)
        dwm.attn.set_parameter("qkv.weight", ref.qkv.weight)
        dwm.attn.set_parameter("qkv.bias", ref.qkv.bias)
        dwm.dmsw.set_parameter("ffc1.weight", ref.proj.weight)
        dwm.dmsw.set_parameter("ffc1.bias", ref.proj.bias)
        for shifted in (False, True):
            x = Tensor(rng.standard_normal((14, 14, 96)), dtype=np.float32)
            trials += 1
            identical += np.array_equal(dwm(x, shifted).data, ref(x, shifted).data)
    criterion(6, "single-window collapse", identical == trials,
              f"{identical}/{trials} random 14x14x96 inputs bit-identical (plain and shifted)")


def test_07_normalisation(criterion):
    rng = np.random.default_rng(7)
    worst_attn = worst_alpha = 0.0
    cases = 0
    for _ in range(1000):
        H, W = (int(s) for s in rng.integers(2, 10, 2))
        heads, d = int(rng.integers(1, 4)), int(rng.integers(1, 5))
        win = int(rng.integers(1, 6))
        shift = int(rng.integers(0, win))
        q, k, v = (Tensor(rng.normal(0, 3, (H, W, heads * d)), dtype=np.float32) for _ in range(3))
        table = Tensor(rng.standard_normal(((2 * win - 1) ** 2, heads)), dtype=np.float32)
        weights = []
        wmsa_branch(q, k, v, heads, win, shift, table, weights_out=weights)
        worst_attn = max(worst_attn, float(np.abs(weights[0].data.sum(-1) - 1).max()))
        cases += 1
    init = Initializer(0, Precision.F32)
    for i in range(1000):
        n = int(rng.integers(1, 5))
        p = DmswParams(init, 8 * n, n, DmswMode.DYNAMIC, "d")
        randomize_parameters(p, rng)
        alpha = select_weights(Tensor(rng.normal(0, 3, (1, 1, p.reduced)), dtype=np.float32), p).data
        worst_alpha = max(worst_alpha, float(np.abs(alpha.sum(0) - 1).max()))
    ok = max(worst_attn, worst_alpha) <= 1e-6
    criterion(7, "softmax and alpha normalisation", ok,
              f"{cases} attention maps max |row sum - 1| {worst_attn:.2e}, "
              f"1000 alpha cases max |column sum - 1| {worst_alpha:.2e}, tol 1e-6")


def test_08_roundtrips(criterion):
    rng = np.random.default_rng(8)
    checked = failures = 0
    for H in range(4, 29):
        for W in range(4, 29):
            x = Tensor(rng.standard_normal((H, W, 2)), dtype=np.float32)
            for win in (2, 4, 7):
                xp, rec = pad_to_multiple(x, win)
                s = win // 2
                ok = np.array_equal(window_reverse(window_partition(xp, win), *xp.shape[:2]).data, xp.data)
                ok &= np.array_equal(crop(xp, rec).data, x.data)
                ok &= np.array_equal(cyclic_shift(cyclic_shift(xp, -s, -s), s, s).data, xp.data)
                checked += 1
                failures += not ok
    criterion(8, "partition/shift/pad roundtrips", failures == 0,
              f"{checked} (H, W, win) combinations, H,W in 4..28, win in {{2,4,7}}, {failures} not bit-exact")


def test_09_relative_position_index(criterion):
    bad = [m for m in range(1, 8) if not np.array_equal(rel_pos_index(m), oracle.brute_rel_pos(m))]
    criterion(9, "relative position index", not bad,
              f"M=1..7 exhaustive, mismatching M: {bad or 'none'}")


def test_10_gradient_check(criterion):
    t0 = time.perf_counter()
    result = gradcheck(seed=0, samples=100, epsilon=1e-5, tolerance=1e-6)
    elapsed = time.perf_counter() - t0
    n = len(result.reports)
    ok = result.passed and n >= 100 and result.num_parameters <= 50_000 and elapsed < 120
    criterion(10, "gradient check", ok,
              f"{n} sampled parameters of {result.num_parameters} (<= 50K), F64, eps 1e-5, "
              f"max rel err {result.max_rel:.2e} < 1e-6; {elapsed:.1f}s < 120s")


def test_11_mode_collapse_and_capacity(criterion):
    rng = np.random.default_rng(11)
    worst = 0.0
    for cfg_dyn in (toy_config(), dw_t(image_size=(64, 64), num_classes=10)):
        dyn = build_model(cfg_dyn, seed=1, precision=Precision.F32)
        randomize_parameters(dyn, rng)
        for name, _ in dyn.named_parameters():
            if ".falpha." in name and ".falpha.0." not in name:
                dyn.set_parameter(name, dyn.get_parameter(_falpha0(name)))
        eq = build_model(cfg_dyn.with_mode(DmswMode.EQUAL), seed=1, precision=Precision.F32)
        for name, _ in eq.named_parameters():
            eq.set_parameter(name, dyn.get_parameter(name))
        image = Tensor(rng.standard_normal(tuple(cfg_dyn.image_size) + (3,)), dtype=np.float32)
        with no_grad():
            worst = max(worst, float(np.abs(dyn(image).data - eq(image).data).max()))
    ordering = {}
    for name, make in (("DW-T", dw_t), ("DW-B", dw_b)):
        ordering[name] = [_params(make(mode=m)) for m in (DmswMode.DYNAMIC, DmswMode.EQUAL, DmswMode.OFF)]
    ordered = all(a > b > c for a, b, c in ordering.values())
    detail = "; ".join(f"{k} {a / 1e6:.2f}M > {b / 1e6:.2f}M > {c / 1e6:.2f}M" for k, (a, b, c) in ordering.items())
    criterion(11, "mode collapse and capacity ordering", worst <= 1e-6 and ordered,
              f"symmetric dynamic vs equal max logit diff {worst:.2e} <= 1e-6; {detail}")


def _falpha0(name: str) -> str:
    head, tail = name.split(".falpha.")
    return f"{head}.falpha.0.{tail.split('.', 1)[1]}"


def test_12_determinism(criterion):
    cfg = toy_config()
    image = Tensor(np.random.default_rng(12).standard_normal((16, 16, 3)), dtype=np.float32)
    runs = []
    for _ in range(2):
        model = build_model(cfg, seed=42)
        with no_grad():
            logits = model(image).data.copy()
        weights = [p.data.copy() for p in model.parameters()]
        runs.append((weights, logits, analyze(cfg).to_json(), analyze(dw_t()).to_json()))
    (w1, l1, r1, d1), (w2, l2, r2, d2) = runs
    same_w = len(w1) == len(w2) and all(np.array_equal(a, b) for a, b in zip(w1, w2))
    ok = same_w and np.array_equal(l1, l2) and r1 == r2 and d1 == d2
    criterion(12, "determinism", ok,
              f"weights {'identical' if same_w else 'differ'}, logits "
              f"{'identical' if np.array_equal(l1, l2) else 'differ'}, reports "
              f"{'identical' if r1 == r2 and d1 == d2 else 'differ'} across two seed-42 runs")


if __name__ == "__main__":
    import sys

    import pytest

    sys.exit(pytest.main([__file__, "-q"]))
