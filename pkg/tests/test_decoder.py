import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maskconver.backbone import TinyBackbone, backbone_cost
from maskconver.decoder import ConvNeXtUNet, DecoderConfig

COCO_TAPS = {3: (1, 512, 80, 80), 4: (1, 1024, 40, 40), 5: (1, 2048, 20, 20)}
RESNET_CH = {3: 512, 4: 1024, 5: 2048}


def decoder_params(n, d):
    return ConvNeXtUNet(DecoderConfig(n, d), RESNET_CH).cost(COCO_TAPS).params


def test_coco_decoder_within_budget():
    p = decoder_params([18, 1, 1], [384, 384, 384])
    assert 20e6 <= p <= 35e6


def test_wider_l5_costs_more():
    assert decoder_params([3, 9, 3], [768, 384, 192]) > decoder_params([3, 9, 3], [384, 384, 192])


@settings(max_examples=20, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=3, max_size=3),
       st.lists(st.sampled_from([16, 32, 48]), min_size=3, max_size=3),
       st.integers(0, 2), st.booleans())
def test_params_monotone(n, d, idx, bump_width):
    n2, d2 = list(n), list(d)
    if bump_width:
        d2[idx] += 16
    else:
        n2[idx] += 1
    assert decoder_params(n2, d2) > decoder_params(n, d)


def desk_pyramid(rng, n=1):
    bb = TinyBackbone()
    return bb.forward(rng.uniform(size=(n, 3, 128, 128)), bb.init_params(rng))


def test_desk_output_shapes():
    rng = np.random.default_rng(0)
    dec = ConvNeXtUNet(DecoderConfig(), TinyBackbone().channels)
    out = dec.forward(desk_pyramid(rng), dec.init_params(rng))
    assert out[5].shape == (1, 32, 4, 4)
    assert out[4].shape == (1, 32, 8, 8)
    assert out[3].shape == (1, 32, 16, 16)


def test_cost_params_match_init():
    dec = ConvNeXtUNet(DecoderConfig([2, 1, 1], [32, 48, 64]), TinyBackbone().channels)
    _, taps = backbone_cost(TinyBackbone(), (1, 3, 64, 64))
    assert dec.cost(taps).params == dec.init_params(np.random.default_rng(0)).num_params()


def test_zero_layer_scale_exposes_skip_wiring():
    """With dead residual branches each level is lateral(x_l) + resize(top(P_{l+1}))."""
    from maskconver.blocks import norm, conv
    from maskconver.numerics import ops

    rng = np.random.default_rng(1)
    chans = {3: 3, 4: 4, 5: 5}
    dec = ConvNeXtUNet(DecoderConfig([1, 2, 1], [16, 16, 16]), chans)
    p = dec.init_params(rng, np.float64)
    for k in p:
        if k.endswith("layer_scale"):
            p[k].data[...] = 0
        elif not k.endswith(("gamma", "beta")):
            p[k].data[...] = rng.standard_normal(p[k].shape)
    pyr = {l: rng.standard_normal((1, c, 2 ** (6 - l), 2 ** (6 - l))) for l, c in chans.items()}
    out = dec.forward(pyr, p)

    def lat(l):
        return norm(conv(pyr[l], p.scope(f"l{l}.lateral.conv")),
                    p.scope(f"l{l}.lateral.norm")).data

    def top(l, prev):
        t = norm(conv(prev, p.scope(f"l{l}.top.conv")), p.scope(f"l{l}.top.norm"))
        return ops.bilinear_resize(t, *pyr[l].shape[2:]).data

    p5 = lat(5)
    np.testing.assert_allclose(out[5].data, p5, atol=1e-12)
    p4 = lat(4) + top(4, p5)
    np.testing.assert_allclose(out[4].data, p4, atol=1e-12)
    np.testing.assert_allclose(out[3].data, lat(3) + top(3, p4), atol=1e-12)


def test_batch_order_equivariance():
    rng = np.random.default_rng(2)
    dec = ConvNeXtUNet(DecoderConfig(), TinyBackbone().channels)
    p = dec.init_params(rng, np.float64)
    pyr = {l: rng.standard_normal((3, c, 2 ** (7 - l), 2 ** (7 - l))) for l, c in TinyBackbone().channels.items()}
    perm = [2, 0, 1]
    a = dec.forward(pyr, p)
    b = dec.forward({l: v[perm] for l, v in pyr.items()}, p)
    for l in (3, 4, 5):
        np.testing.assert_allclose(b[l].data, a[l].data[perm], atol=1e-12)


@pytest.mark.parametrize("kw", [dict(N=[0, 1, 1]), dict(D=[32, 32]), dict(D=[30, 32, 32])])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        DecoderConfig(**kw)


def test_missing_levels_rejected():
    with pytest.raises(ValueError):
        ConvNeXtUNet(DecoderConfig(), {3: 8, 4: 8})
