import numpy as np
import pytest

from limkit.boundary import ba_aggregate
from limkit.lim import LimConfig, boundary_activate, lim_forward
from limkit.nn import ConvWeights
from limkit.pyramid import FeaturePyramid, LimParams, bottom_up_dense, residual_combine, top_down_dense
from limkit.tensor import Tensor


def pyramid(rng, levels, channels, size, n=1):
    return FeaturePyramid([Tensor(rng.normal(size=(n, channels, size >> l, size >> l))) for l in range(levels)])


def single_source(levels, size, value=1.0, top=True):
    maps = [np.zeros((1, 1, size >> l, size >> l)) for l in range(levels)]
    maps[-1 if top else 0][:] = value
    return FeaturePyramid([Tensor(m) for m in maps])


def test_pyramid_validation():
    with pytest.raises(ValueError, match="half"):
        FeaturePyramid([Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 3, 3)))])
    with pytest.raises(ValueError, match="batch"):
        FeaturePyramid([Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((2, 1, 2, 2)))])
    with pytest.raises(ValueError):
        FeaturePyramid([])


def test_top_down_single_level():
    rng = np.random.default_rng(0)
    f = pyramid(rng, 1, 3, 4)
    p = LimParams.init([3], 2, seed=1)
    from limkit.nn import conv2d
    np.testing.assert_array_equal(top_down_dense(f, p)[0].data, conv2d(f[0], p.top_down[0]).data)


def test_top_down_two_levels():
    a = top_down_dense(single_source(2, 2), LimParams.identity(2, 1))
    np.testing.assert_array_equal(a[0].data, np.ones((1, 1, 2, 2)))


def test_top_down_three_level_dense_example():
    a = top_down_dense(single_source(3, 4), LimParams.identity(3, 1))
    np.testing.assert_array_equal(a[2].data, np.ones((1, 1, 1, 1)))
    np.testing.assert_array_equal(a[1].data, np.ones((1, 1, 2, 2)))
    np.testing.assert_array_equal(a[0].data, np.full((1, 1, 4, 4), 2.0))


def test_bottom_up_single_level_and_mirror():
    p = LimParams.identity(3, 1, bottom_up_in=1)
    ct = bottom_up_dense(single_source(3, 4, top=False), p)
    np.testing.assert_array_equal(ct[0].data, np.ones((1, 1, 4, 4)))
    np.testing.assert_array_equal(ct[1].data, np.ones((1, 1, 2, 2)))
    np.testing.assert_array_equal(ct[2].data, np.full((1, 1, 1, 1), 2.0))


def test_bottom_up_constant_maps_with_averaging_projection():
    d = 2
    avg = ConvWeights(Tensor(np.full((d, 4 * d, 1, 1), 1.0 / (4 * d))), Tensor(np.zeros((1, d, 1, 1))))
    p = LimParams([ConvWeights.identity(d)] * 2, [avg, avg])
    b = FeaturePyramid([Tensor(np.full((1, 4 * d, 4, 4), 3.0)), Tensor(np.full((1, 4 * d, 2, 2), 5.0))])
    ct = bottom_up_dense(b, p)
    np.testing.assert_allclose(ct[0].data, 3.0)
    np.testing.assert_allclose(ct[1].data, 5.0 + 3.0)


def test_residual_cases():
    rng = np.random.default_rng(1)
    f = pyramid(rng, 2, 2, 4)
    zeros = FeaturePyramid([Tensor(np.zeros(t.shape)) for t in f])
    np.testing.assert_array_equal(residual_combine(zeros, f)[1].data, f[1].data)
    np.testing.assert_array_equal(residual_combine(f, zeros)[0].data, f[0].data)
    c = residual_combine(FeaturePyramid([Tensor(np.ones((1, 1, 1, 1)))]), FeaturePyramid([Tensor(np.full((1, 1, 1, 1), 2.0))]))
    assert c[0].data.item() == 3.0


def test_residual_projection_and_errors():
    rng = np.random.default_rng(2)
    f = pyramid(rng, 2, 3, 4)
    ct = pyramid(rng, 2, 2, 4)
    p = LimParams.init([3, 3], 2, seed=0)
    assert p.output is not None
    assert [t.shape for t in residual_combine(ct, f, p)] == [(1, 2, 4, 4), (1, 2, 2, 2)]
    with pytest.raises(ValueError, match="projection"):
        residual_combine(ct, f)
    with pytest.raises(ValueError, match="levels"):
        residual_combine(FeaturePyramid([ct[0]]), f)


def test_linearity_without_ba():
    rng = np.random.default_rng(3)
    f = pyramid(rng, 3, 2, 8)
    p = LimParams.init([2, 2, 2], 3, seed=4)
    for t in p.top_down:
        t.bias.data[:] = 0
    a1 = top_down_dense(f, p)
    a2 = top_down_dense(FeaturePyramid([Tensor(2.5 * t.data) for t in f]), p)
    for x, y in zip(a1, a2):
        np.testing.assert_allclose(y.data, 2.5 * x.data, rtol=1e-12)


@pytest.mark.parametrize("levels", [1, 2, 3])
@pytest.mark.parametrize("ablation", ["sp", "bp", "full"])
@pytest.mark.parametrize("ba_mode", ["concat", "max-fuse"])
def test_lim_shape_contract(levels, ablation, ba_mode):
    rng = np.random.default_rng(levels)
    cfg = LimConfig(levels=levels, width=4, ba_mode=ba_mode, ablation=ablation)
    f = pyramid(rng, levels, 4, 8, n=2)
    out = lim_forward(f, cfg.init_params([4] * levels, seed=1), cfg)
    assert out.shapes == f.shapes


def test_lim_full_equals_manual_composition():
    rng = np.random.default_rng(5)
    cfg = LimConfig(levels=3, width=4)
    f = pyramid(rng, 3, 4, 8)
    p = cfg.init_params([4, 4, 4], seed=2)
    manual = residual_combine(bottom_up_dense(FeaturePyramid([ba_aggregate(a) for a in top_down_dense(f, p)]), p), f, p)
    out = lim_forward(f, p, cfg)
    for x, y in zip(out, manual):
        assert np.array_equal(x.data, y.data)


def test_lim_single_level_dominance():
    x = Tensor(np.array([[0.0, 2.0], [1.0, 3.0]]).reshape(1, 1, 2, 2))
    cfg = LimConfig(levels=1, width=1)
    out = lim_forward(FeaturePyramid([x]), LimParams.identity(1, 1, bottom_up_in=4), cfg)
    # C = sum of the four scans of V(F) + F, each scan >= its input
    assert (out[0].data >= 4 * x.data + x.data).all()


def test_bp_and_full_agree_on_constant_maps_with_max_fuse():
    f = FeaturePyramid([Tensor(np.full((1, 2, 4, 4), 1.5)), Tensor(np.full((1, 2, 2, 2), -0.5))])
    p = LimParams.init([2, 2], 2, bottom_up_in=2, seed=3)
    full = lim_forward(f, p, LimConfig(levels=2, width=2, ba_mode="max-fuse", ablation="full"))
    bp = lim_forward(f, p, LimConfig(levels=2, width=2, ba_mode="max-fuse", ablation="bp"))
    for x, y in zip(full, bp):
        np.testing.assert_array_equal(x.data, y.data)


def test_config_aliases_and_validation():
    assert LimConfig(ablation="BP+BA").ablation == "full"
    assert LimConfig(ablation="sp-only").bottom_up_in is None
    assert LimConfig(ablation="bp-only", width=8).bottom_up_in == 8
    assert LimConfig(width=8).bottom_up_in == 32
    assert LimConfig(width=8, ba_mode="max-fuse").bottom_up_in == 8
    with pytest.raises(ValueError):
        LimConfig(ablation="ba")
    with pytest.raises(ValueError):
        LimConfig(levels=0)


def test_lim_rejects_inconsistent_inputs():
    rng = np.random.default_rng(6)
    cfg = LimConfig(levels=2, width=4)
    p = cfg.init_params([4, 4])
    with pytest.raises(ValueError, match="levels"):
        lim_forward(pyramid(rng, 3, 4, 8), p, cfg)
    bp = LimConfig(levels=2, width=4, ablation="bp")
    with pytest.raises(ValueError, match="bottom-up"):
        lim_forward(pyramid(rng, 2, 4, 8), p, bp)


def test_boundary_activate_widths():
    rng = np.random.default_rng(7)
    out = boundary_activate(pyramid(rng, 2, 3, 4))
    assert out.channels == [12, 12]
