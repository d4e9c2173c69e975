import math

import numpy as np
import pytest

from dwvit import oracle


def test_gelu_scalar_values():
    assert oracle.gelu_scalar(0.0) == 0.0
    assert abs(oracle.gelu_scalar(1.0) - 0.8413447460685429) < 1e-15
    assert abs(oracle.gelu_scalar(-1.0) + 0.15865525393145707) < 1e-15


def test_softmax_list_is_shift_invariant():
    a = oracle.softmax_list([1.0, 2.0, 3.0])
    b = oracle.softmax_list([1001.0, 1002.0, 1003.0])
    assert math.isclose(math.fsum(a), 1.0) and np.allclose(a, b, atol=1e-15)


def test_dense_msa_single_token_returns_value(rng):
    x = rng.standard_normal((1, 4))
    w = rng.standard_normal((4, 12))
    assert np.allclose(oracle.dense_msa(x, w, 2), x @ w[:, 8:], atol=1e-14)


def test_dense_msa_rejects_large_inputs():
    with pytest.raises(ValueError):
        oracle.dense_msa(np.zeros((300, 2)), np.zeros((2, 6)), 1)


def test_brute_rel_pos_m2():
    expected = np.array([[4, 3, 1, 0], [5, 4, 2, 1], [7, 6, 4, 3], [8, 7, 5, 4]])
    assert np.array_equal(oracle.brute_rel_pos(2), expected)
    with pytest.raises(ValueError):
        oracle.brute_rel_pos(9)


def test_layer_norm_ref_normalises(rng):
    y = oracle.layer_norm_ref(rng.standard_normal((5, 7)) * 3 + 2, np.ones(7), np.zeros(7))
    assert np.abs(y.mean(-1)).max() < 1e-12 and np.abs(y.var(-1) - 1).max() < 1e-4


def test_finite_diff_on_quadratic():
    g = oracle.finite_diff_grad(lambda t: float(t @ t), np.array([1.0, -2.0, 0.5]))
    assert np.allclose(g, [2.0, -4.0, 1.0], atol=1e-9)
    with pytest.raises(FloatingPointError):
        oracle.finite_diff_grad(lambda t: math.inf, np.zeros(1))


def test_diff_report():
    r = oracle.diff_report("x", [1.0, 2.0], [1.0, 2.5], 0.1)
    assert not r.passed and r.max_abs == 0.5 and r.line().startswith("FAIL")
    assert oracle.diff_report("y", [1.0], [1.0, 2.0], 1.0).max_abs == math.inf
    assert oracle.diff_report("z", 2.0, 2.0 + 1e-9, 1e-8, "rel").passed


def test_window_reference_without_shift_is_dense_per_window(rng):
    q, k, v = (rng.standard_normal((4, 4, 4)) for _ in range(3))
    out = oracle.windowed_attention_reference(q, k, v, 1, 4)
    # one window covering the map: plain attention over all 16 tokens
    logits = q.reshape(16, 4) @ k.reshape(16, 4).T / 2.0
    p = np.exp(logits - logits.max(1, keepdims=True))
    p /= p.sum(1, keepdims=True)
    assert np.abs(out.reshape(16, 4) - p @ v.reshape(16, 4)).max() < 1e-12


def test_patch_gather_order():
    image = np.arange(4 * 4 * 2, dtype=float).reshape(4, 4, 2)
    g = oracle.patch_gather_reference(image, 2)
    assert list(g[0, 1]) == [4, 5, 6, 7, 12, 13, 14, 15]
