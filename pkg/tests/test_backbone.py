import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maskconver.backbone import (FeaturePyramid, ResNet50, TinyBackbone, backbone_cost, build_backbone,
                                 describe_extension, extend_pyramid, init_extension)
from maskconver.blocks import cost_of


def test_tiny_shapes_at_128():
    bb = TinyBackbone()
    out = bb.forward(np.zeros((1, 3, 128, 128)), bb.init_params(np.random.default_rng(0)))
    assert out[3].shape == (1, 32, 16, 16)
    assert out[4].shape == (1, 64, 8, 8)
    assert out[5].shape == (1, 96, 4, 4)


@settings(max_examples=12, deadline=None)
@given(st.integers(16, 128).map(lambda v: v * 4), st.integers(16, 128).map(lambda v: v * 4))
def test_tiny_stride_invariant(h, w):
    _, taps = backbone_cost(TinyBackbone(), (1, 3, h, w))
    for level, shape in taps.items():
        assert shape[2:] == (-(-h // 2 ** level), -(-w // 2 ** level))


def test_tiny_forward_matches_cost_shapes():
    bb = TinyBackbone()
    out = bb.forward(np.zeros((1, 3, 68, 100)), bb.init_params(np.random.default_rng(0)))
    _, taps = backbone_cost(bb, (1, 3, 68, 100))
    assert {l: t.shape for l, t in out.items()} == taps


def test_tiny_cost_params_match_init():
    bb = TinyBackbone()
    cost, _ = backbone_cost(bb, (1, 3, 64, 64))
    assert cost.params == bb.init_params(np.random.default_rng(0)).num_params()


def test_resnet50_param_count():
    bb = ResNet50()
    cost, taps = backbone_cost(bb, (1, 3, 256, 256))
    assert cost.params == 25_557_032
    assert cost.params == pytest.approx(25.56e6, rel=0.02)
    assert taps[5] == (1, 2048, 8, 8)
    assert bb.init_params(np.random.default_rng(0)).num_params() == cost.params


def test_resnet50_forward_shapes():
    bb = ResNet50()
    out = bb.forward(np.zeros((1, 3, 256, 256), np.float32), bb.init_params(np.random.default_rng(0)))
    assert out[3].shape == (1, 512, 32, 32)
    assert out[4].shape == (1, 1024, 16, 16)
    assert out[5].shape == (1, 2048, 8, 8)


def test_build_backbone_rejects_unknown():
    with pytest.raises(ValueError, match="unknown backbone"):
        build_backbone("vgg")


def test_pyramid_contiguity():
    with pytest.raises(ValueError):
        FeaturePyramid({3: None, 5: None})
    with pytest.raises(KeyError):
        FeaturePyramid({3: None}).require(3, 4)


# -- L6 / L7 ----------------------------------------------------------------------

def test_extension_shapes_and_default_width():
    p = init_extension(np.random.default_rng(0), 8)
    l6, l7 = extend_pyramid(np.zeros((1, 8, 8, 8), np.float32), p)
    assert l6.shape == (1, 8, 4, 4) and l7.shape == (1, 8, 2, 2)


def test_extension_zero_weights_gives_bias_maps():
    p = init_extension(np.random.default_rng(0), 4, 3, np.float64)
    for t in p.values():
        t.data[...] = 0
    p["l6.proj.bias"].data[...] = [1, 2, 3]
    p["l7.proj.bias"].data[...] = [-1, 0, 5]
    l6, l7 = extend_pyramid(np.random.default_rng(1).standard_normal((2, 4, 8, 8)), p)
    np.testing.assert_array_equal(l6.data, np.broadcast_to(np.array([1, 2, 3])[None, :, None, None], l6.shape))
    np.testing.assert_array_equal(l7.data, np.broadcast_to(np.array([-1, 0, 5])[None, :, None, None], l7.shape))


def test_extension_needs_spatial_extent():
    with pytest.raises(ValueError):
        extend_pyramid(np.zeros((1, 4, 1, 1)), init_extension(np.random.default_rng(0), 4))


def test_extension_cost_matches_init():
    desc = describe_extension(16, 8)
    total = cost_of(desc[6], (1, 16, 8, 8)).params + cost_of(desc[7], (1, 8, 4, 4)).params
    assert total == init_extension(np.random.default_rng(0), 16, 8).num_params()
