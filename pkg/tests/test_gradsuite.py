import numpy as np
import pytest

from maskconver import gradsuite
from maskconver.numerics import ops
from maskconver.numerics.autograd import as_tensor, record


def test_registry_covers_ops_and_blocks():
    kinds = {c.kind for c in gradsuite.REGISTRY.values()}
    assert {"op", "block"} <= kinds
    for name in ("conv2d_depthwise", "gelu", "layer_norm_channels", "focal_loss", "mask_dice",
                 "se_layer", "convnext_se_block", "decoder", "tiny_backbone", "mask_embedding_generator"):
        assert name in gradsuite.REGISTRY


def test_register_twice_rejected():
    with pytest.raises(ValueError):
        gradsuite.register("gelu")(lambda rng, i: None)


@pytest.mark.parametrize("name", ["gelu", "conv2d_grouped", "bilinear_resize", "max_pool2d", "se_layer"])
def test_selected_cases_pass(name):
    (res,) = gradsuite.run_suite(0, names=[name])
    assert len(res.errors) == gradsuite.N_SHAPES
    assert res.passed(1e-4), res.errors


def test_unknown_case():
    with pytest.raises(KeyError):
        gradsuite.run_suite(names=["no_such_op"])


def _bad_exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return record(out, (a,), lambda g: (g * out * 1.01,))


def test_corrupted_vjp_is_caught(monkeypatch):
    monkeypatch.setattr(ops, "exp", _bad_exp)
    (res,) = gradsuite.run_suite(0, names=["exp"])
    assert not res.passed(1e-4)
    assert res.max_error > 1e-3
    assert "FAIL" in gradsuite.format_table([res])


def test_table_format():
    r = gradsuite.CaseResult("x", "op", [1e-9, 2e-9, 3e-9])
    table = gradsuite.format_table([r])
    assert "PASS" in table and "3.000e-09" in table
    assert not gradsuite.CaseResult("y", "op").passed()
