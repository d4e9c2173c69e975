import numpy as np
import pytest

from dwvit import oracle
from dwvit.dwm import (
    DmswMode,
    DmswParams,
    DynamicWindowModule,
    equal_weights,
    fuse,
    select,
    select_weights,
)
from dwvit.nn import Initializer, identity_linear
from dwvit.tensor import Precision, ShapeError, Tensor, backward, ops
from dwvit.verify import randomize_parameters
from dwvit.windows import WindowSet


def params(dim=24, n_win=3, mode=DmswMode.DYNAMIC, seed=0, precision=Precision.F64):
    p = DmswParams(Initializer(seed, precision), dim, n_win, mode, "d")
    randomize_parameters(p, np.random.default_rng(seed))
    return p


def weights_of(p):
    return {n: t.data for n, t in p.named_parameters()}


def test_reduced_width_and_members():
    p = DmswParams(Initializer(0), 96, 3, DmswMode.DYNAMIC, "d")
    assert p.reduced == 16 and len(p.falpha) == 3
    assert p.ffc3.weight.shape == (32, 32) and p.ffc4.weight.shape == (32, 96)
    with pytest.raises(ValueError):
        DmswParams(Initializer(0), 30, 4, DmswMode.DYNAMIC, "d")


def test_fuse_identity_projection(rng):
    p = params()
    identity_linear(p.ffc1)
    y = Tensor(rng.standard_normal((4, 5, 24)))
    y_hat, y_fuse = fuse(y, p)
    assert np.array_equal(y_hat.data, y.data)
    assert y_fuse.shape == (1, 1, 4)


def test_fuse_shape_dwt_stage1(rng):
    p = DmswParams(Initializer(0), 96, 3, DmswMode.DYNAMIC, "d")
    _, y_fuse = fuse(Tensor(rng.standard_normal((7, 7, 96)), dtype=np.float32), p)
    assert y_fuse.shape == (1, 1, 16)


@pytest.mark.parametrize("value", [-1.5, 0.0, 0.7])
def test_fuse_constant_input_matches_oracle(value):
    p = params()
    y = np.full((3, 3, 24), value)
    y_hat, y_fuse = fuse(Tensor(y), p)
    ref_hat, ref_fuse = oracle.fuse_reference(y, weights_of(p))
    assert np.abs(y_fuse.data - ref_fuse).max() < 1e-12
    assert np.abs(y_hat.data - ref_hat).max() < 1e-12
    assert np.ptp(y_hat.data.reshape(-1, 24), axis=0).max() == 0


def test_fuse_rejects_wrong_width(rng):
    with pytest.raises(ShapeError):
        fuse(Tensor(rng.standard_normal((2, 2, 12))), params())


def test_symmetric_falpha_gives_uniform_weights(rng):
    p = params()
    for i in range(1, 3):
        p.set_parameter(f"falpha.{i}.weight", p.falpha[0].weight)
        p.set_parameter(f"falpha.{i}.bias", p.falpha[0].bias)
    alpha = select_weights(Tensor(rng.standard_normal((1, 1, 4))), p).data
    assert np.array_equal(alpha, np.full((3, 8), 1 / 3))


def test_alpha_normalised_and_matches_oracle(rng):
    for seed in range(20):
        p = params(seed=seed)
        code = rng.standard_normal((1, 1, 4))
        alpha = select_weights(Tensor(code), p).data
        assert np.abs(alpha.sum(0) - 1).max() < 1e-6
        assert np.abs(alpha - oracle.alpha_reference(code, weights_of(p), 3)).max() < 1e-6


def test_select_one_hot_depends_on_single_branch(rng):
    p = params()
    identity_linear(p.ffc3)
    identity_linear(p.ffc4)
    branches = [rng.standard_normal((3, 3, 8)) for _ in range(3)]
    alpha = np.zeros((3, 8))
    alpha[1] = 1.0
    out = select([Tensor(b) for b in branches], Tensor(alpha), p).data
    assert np.array_equal(out[..., :8], branches[1]) and not out[..., 8:].any()


def test_select_equal_weights_is_mean(rng):
    p = params()
    identity_linear(p.ffc3)
    identity_linear(p.ffc4)
    branches = [rng.standard_normal((3, 3, 8)) for _ in range(3)]
    out = select([Tensor(b) for b in branches], equal_weights(p, Tensor(branches[0])), p).data
    np.testing.assert_allclose(out[..., :8], sum(branches) / 3, atol=1e-14)


def test_select_matches_oracle_and_is_linear(rng):
    p = params()
    alpha = select_weights(Tensor(rng.standard_normal((1, 1, 4))), p)
    a = [rng.standard_normal((4, 4, 8)) for _ in range(3)]
    b = [rng.standard_normal((4, 4, 8)) for _ in range(3)]
    sel = lambda bs: select([Tensor(x) for x in bs], alpha, p).data
    assert np.abs(sel(a) - oracle.select_reference(a, alpha.data, weights_of(p))).max() < 1e-12
    zero = [np.zeros((4, 4, 8))] * 3
    lhs = sel([x + y for x, y in zip(a, b)])
    assert np.abs(lhs - (sel(a) + sel(b) - sel(zero))).max() < 1e-5


def test_select_branch_count_mismatch(rng):
    p = params()
    with pytest.raises(ShapeError):
        select([Tensor(rng.standard_normal((2, 2, 8)))] * 2, Tensor(np.full((3, 8), 1 / 3)), p)


def _module(mode, seed=0, precision=Precision.F64):
    m = DynamicWindowModule(Initializer(seed, precision), 24, 3, WindowSet.of([2, 3, 6]), mode, "m")
    randomize_parameters(m, np.random.default_rng(seed))
    return m


@pytest.mark.parametrize("mode", list(DmswMode))
@pytest.mark.parametrize("shifted", [False, True])
def test_shape_preserved(rng, mode, shifted):
    x = Tensor(rng.standard_normal((6, 7, 24)))
    assert _module(mode)(x, shifted).shape == (6, 7, 24)


def test_dynamic_with_symmetric_falpha_equals_equal_weight(rng):
    dyn = _module(DmswMode.DYNAMIC)
    for i in range(1, 3):
        dyn.dmsw.set_parameter(f"falpha.{i}.weight", dyn.dmsw.falpha[0].weight)
        dyn.dmsw.set_parameter(f"falpha.{i}.bias", dyn.dmsw.falpha[0].bias)
    eq = _module(DmswMode.EQUAL)
    for name, t in eq.named_parameters():
        eq.set_parameter(name, dyn.get_parameter(name))
    x = Tensor(rng.standard_normal((6, 6, 24)))
    assert np.abs(dyn(x, True).data - eq(x, True).data).max() < 1e-6


def test_off_mode_is_projected_attention(rng):
    m = _module(DmswMode.OFF)
    x = Tensor(rng.standard_normal((6, 6, 24)))
    y, _ = m.attn(x)
    assert np.array_equal(m(x).data, m.dmsw.ffc1(y).data)
    assert not hasattr(m.dmsw, "ffc3")


def test_every_dmsw_parameter_gets_gradient(rng):
    m = _module(DmswMode.DYNAMIC)
    x = Tensor(rng.standard_normal((6, 6, 24)))
    dmsw_params = m.dmsw.parameters()
    grads = backward(ops.sum(m(x)), dmsw_params)
    for p in dmsw_params:
        assert np.abs(grads[p].data).max() > 0, p.name


def test_mode_param_ordering():
    counts = {mode: DmswParams(Initializer(0), 96, 3, mode, "d").num_parameters() for mode in DmswMode}
    assert counts[DmswMode.DYNAMIC] > counts[DmswMode.EQUAL] > counts[DmswMode.OFF]
