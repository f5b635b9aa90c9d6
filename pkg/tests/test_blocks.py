import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maskconver import blocks
from maskconver.blocks import (Act, BlockParams, Conv2d, CostReport, Norm, Sequential, cost_of,
                               convnext_se_block, describe_convnext_block, describe_light_head,
                               describe_se, init_convnext_block, init_light_head, init_se, light_head,
                               se_layer)
from maskconver.numerics import Tensor


def rand_params(p, rng):
    for t in p.values():
        t.data[...] = rng.standard_normal(t.shape)
    return p


# -- BlockParams ----------------------------------------------------------------

def test_scope_and_nest():
    p = BlockParams()
    p.nest("a", BlockParams(w=Tensor(np.ones(2))))
    p.nest("b.c", BlockParams(w=Tensor(np.zeros(3))))
    assert sorted(p) == ["a.w", "b.c.w"]
    assert list(p.scope("b")) == ["c.w"]
    assert p.num_params() == 5
    with pytest.raises(KeyError):
        p.scope("zzz")


def test_save_load_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    p = init_convnext_block(rng, 8, dtype=np.float32)
    p.save(tmp_path / "blk")
    q = BlockParams.load(tmp_path / "blk")
    assert sorted(q) == sorted(p)
    for k in p:
        np.testing.assert_array_equal(q[k].data, p[k].data)


def test_copy_arrays_is_deep():
    p = BlockParams(w=Tensor(np.ones(2), requires_grad=True))
    q = p.copy_arrays()
    q["w"].data[0] = 5
    assert p["w"].data[0] == 1


def test_layer_scale_length_matches_channels():
    p = init_convnext_block(np.random.default_rng(0), 16)
    assert p["layer_scale"].shape == (16,)
    np.testing.assert_array_equal(p["layer_scale"].data, blocks.LAYER_SCALE_INIT)


# -- SE ---------------------------------------------------------------------------

def test_se_saturated_gate_is_identity():
    rng = np.random.default_rng(0)
    p = init_se(rng, 16, 4)
    p["fc2.bias"].data[...] = 1e6
    x = rng.standard_normal((2, 16, 3, 3))
    np.testing.assert_allclose(se_layer(x, p).data, x)


def test_se_zero_params_halves_input():
    p = init_se(np.random.default_rng(0), 8, 4)
    for t in p.values():
        t.data[...] = 0
    x = np.random.default_rng(1).standard_normal((1, 8, 2, 2))
    np.testing.assert_allclose(se_layer(x, p).data, x / 2)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["sigmoid", "hard_sigmoid"]))
def test_se_never_amplifies(seed, gate):
    rng = np.random.default_rng(seed)
    p = rand_params(init_se(rng, 16, 4), rng)
    x = rng.standard_normal((2, 16, 3, 3)) * 3
    assert np.all(np.abs(se_layer(x, p, gate).data) <= np.abs(x) + 1e-12)


# -- ConvNeXt block ------------------------------------------------------------------

@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 2), st.sampled_from([8, 16]), st.integers(1, 6))
def test_convnext_zero_layer_scale_is_identity(seed, n, c, hw):
    rng = np.random.default_rng(seed)
    p = rand_params(init_convnext_block(rng, c, reduction=4), rng)
    p["layer_scale"].data[...] = 0
    x = rng.standard_normal((n, c, hw, hw + 1))
    out = convnext_se_block(x, p)
    assert out.shape == x.shape
    np.testing.assert_array_equal(out.data, x)


def test_convnext_without_se():
    rng = np.random.default_rng(0)
    p = init_convnext_block(rng, 8, use_se=False)
    assert not any(k.startswith("se.") for k in p)
    assert convnext_se_block(rng.standard_normal((1, 8, 4, 4)), p).shape == (1, 8, 4, 4)


def test_convnext_cost_matches_param_count():
    for use_se in (True, False):
        p = init_convnext_block(np.random.default_rng(0), 32, use_se=use_se)
        assert cost_of(describe_convnext_block(32, use_se), (1, 32, 8, 8)).params == p.num_params()


# -- light head -----------------------------------------------------------------

def test_light_head_bias_only_gives_constant():
    p = init_light_head(np.random.default_rng(0), 4, 3, out_bias=0.0)
    for t in p.values():
        t.data[...] = 0
    p["proj.bias"].data[...] = [1.0, -2.0, 0.5]
    out = light_head(np.random.default_rng(1).standard_normal((2, 4, 5, 5)), p).data
    for ch, b in enumerate([1.0, -2.0, 0.5]):
        np.testing.assert_array_equal(out[:, ch], b)


@pytest.mark.parametrize("kind", ["depthwise", "dense"])
@pytest.mark.parametrize("depth", [1, 2, 3])
def test_light_head_shape_and_cost(kind, depth):
    p = init_light_head(np.random.default_rng(0), 6, 5, depth, kind)
    assert light_head(np.zeros((2, 6, 7, 3)), p).shape == (2, 5, 7, 3)
    assert cost_of(describe_light_head(6, 5, depth, kind), (1, 6, 7, 3)).params == p.num_params()


def test_light_head_far_cheaper_than_dense():
    light = cost_of(describe_light_head(384, 384, 2, "depthwise"), (1, 384, 100, 100))
    dense = cost_of(describe_light_head(384, 384, 2, "dense"), (1, 384, 100, 100))
    assert light.flops < 0.25 * dense.flops
    assert light.params < 0.25 * dense.params


def test_unknown_head_kind():
    with pytest.raises(ValueError):
        init_light_head(np.random.default_rng(0), 4, 2, kind="fancy")


# -- cost accounting ----------------------------------------------------------------

def test_counting_examples():
    assert cost_of(Conv2d(3, 8, 1), (1, 3, 4, 4)).params == 32
    assert cost_of(Conv2d(384, 384, 7, padding=3, groups=384), (1, 384, 10, 10)).params == 19200
    dense = cost_of(Conv2d(384, 384, 3, padding=1, bias=False), (1, 384, 100, 100)).flops
    dw = cost_of(Conv2d(384, 384, 7, padding=3, groups=384, bias=False), (1, 384, 100, 100)).flops
    assert dense / dw == pytest.approx(9 * 384 / 49)


def test_conv_flops_formula():
    c = cost_of(Conv2d(3, 8, 3, stride=2, padding=1), (2, 3, 9, 9))
    assert c.flops == 2 * 9 * 3 * 8 * 5 * 5 * 2


@settings(max_examples=25, deadline=None)
@given(st.lists(st.sampled_from(["conv", "norm", "act"]), min_size=1, max_size=6), st.integers(1, 3))
def test_sequential_cost_is_additive(kinds, n):
    layers, c = [], 4
    for k in kinds:
        if k == "conv":
            layers.append(Conv2d(c, c + 1, 3, padding=1))
            c += 1
        elif k == "norm":
            layers.append(Norm(c))
        else:
            layers.append(Act())
    shape = (n, 4, 6, 6)
    total = CostReport()
    for layer in layers:
        part, shape = layer.cost(shape)
        total = total + part
    assert cost_of(Sequential(tuple(layers)), (n, 4, 6, 6)) == total


def test_se_cost_params():
    assert cost_of(describe_se(64, 16), (1, 64, 4, 4)).params == init_se(np.random.default_rng(0), 64, 16).num_params()


def test_cost_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        cost_of(Conv2d(3, 4, 1), (1, 5, 2, 2))
