"""Registry of finite-difference gradient checks over ops and composite blocks.

Every case builds a function and its float64 inputs for several shapes;
``run_suite`` compares tape gradients with central differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import blocks
from .backbone import TinyBackbone, extend_pyramid, init_extension
from .blocks import BlockParams
from .decoder import ConvNeXtUNet, DecoderConfig
from .embedding import generate_mask_embeddings, init_generator
from .heads import init_heads, mask_feature_forward
from .numerics import Tensor, check_gradients, ops
from .training.losses import focal_loss, mask_losses

TOLERANCE = 1e-4
N_SHAPES = 3

Builder = Callable[[np.random.Generator, int], tuple[Callable, list]]


@dataclass
class GradCase:
    name: str
    kind: str
    build: Builder
    max_entries: int | None = None


@dataclass
class CaseResult:
    name: str
    kind: str
    errors: list[float] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max(self.errors) if self.errors else float("nan")

    def passed(self, tol: float = TOLERANCE) -> bool:
        return bool(self.errors) and self.max_error < tol


REGISTRY: dict[str, GradCase] = {}


def register(name: str, kind: str = "op", max_entries: int | None = None):
    def deco(fn: Builder) -> Builder:
        if name in REGISTRY:
            raise ValueError(f"gradient case {name!r} registered twice")
        REGISTRY[name] = GradCase(name, kind, fn, max_entries)
        return fn
    return deco


def _away_from(rng, shape, kinks, gap=0.05, scale=1.0):
    """Random values at least ``gap`` away from every kink (non-smooth points)."""
    x = rng.standard_normal(shape) * scale
    for k in kinks:
        close = np.abs(x - k) < gap
        x[close] = k + np.where(x[close] >= k, gap, -gap) * 2
    return x


def _randomize(params: BlockParams, rng, scale: float = 0.5) -> BlockParams:
    """O(1) random values everywhere so no term is negligible (e.g. layer scale 1e-6)."""
    out = BlockParams()
    for k, t in params.items():
        base = 1.0 if k.endswith("gamma") else 0.0
        out[k] = base + rng.standard_normal(t.shape) * scale
    return out


def _with_params(params: BlockParams, forward):
    """Turn ``forward(x, params)`` into ``fn(x, *param_arrays)`` checked against all of them."""
    names = list(params)

    def fn(x, *ws):
        return forward(x, BlockParams(zip(names, ws)))

    return fn, [params[n] for n in names]


# -- elementwise -----------------------------------------------------------------

_SHAPES = [(3,), (2, 3), (2, 1, 4)]


@register("add")
def _(rng, i):
    s = _SHAPES[i]
    return ops.add, [rng.standard_normal(s), rng.standard_normal(s[-1:])]


@register("sub")
def _(rng, i):
    s = _SHAPES[i]
    return ops.sub, [rng.standard_normal(s[-1:]), rng.standard_normal(s)]


@register("mul")
def _(rng, i):
    s = _SHAPES[i]
    return ops.mul, [rng.standard_normal(s), rng.standard_normal(s)]


@register("div")
def _(rng, i):
    s = _SHAPES[i]
    return ops.div, [rng.standard_normal(s), rng.uniform(0.5, 2.0, s) * rng.choice([-1, 1], s)]


@register("neg")
def _(rng, i):
    return ops.neg, [rng.standard_normal(_SHAPES[i])]


@register("exp")
def _(rng, i):
    return ops.exp, [rng.standard_normal(_SHAPES[i])]


@register("log")
def _(rng, i):
    return ops.log, [rng.uniform(0.2, 3.0, _SHAPES[i])]


@register("power")
def _(rng, i):
    p = (2, 3, 0.5)[i]
    return (lambda a: ops.power(a, p)), [rng.uniform(0.3, 2.0, _SHAPES[i])]


@register("clip")
def _(rng, i):
    return (lambda a: ops.clip(a, -0.5, 0.5)), [_away_from(rng, _SHAPES[i], (-0.5, 0.5))]


@register("sigmoid")
def _(rng, i):
    return ops.sigmoid, [rng.standard_normal(_SHAPES[i]) * 3]


@register("hard_sigmoid")
def _(rng, i):
    return ops.hard_sigmoid, [_away_from(rng, _SHAPES[i], (-3.0, 3.0), scale=3.0)]


@register("gelu")
def _(rng, i):
    return ops.gelu, [rng.standard_normal(_SHAPES[i]) * 2]


@register("relu")
def _(rng, i):
    return ops.relu, [_away_from(rng, _SHAPES[i], (0.0,))]


@register("log_sigmoid")
def _(rng, i):
    return ops.log_sigmoid, [rng.standard_normal(_SHAPES[i]) * 4]


# -- reductions and shapes -------------------------------------------------------

@register("sum")
def _(rng, i):
    axis = (None, 1, (0, 2))[i]
    return (lambda a: ops.sum(a, axis=axis)), [rng.standard_normal((2, 3, 4))]


@register("mean")
def _(rng, i):
    axis, keep = ((None, False), (0, True), ((1, 2), False))[i]
    return (lambda a: ops.mean(a, axis=axis, keepdims=keep)), [rng.standard_normal((3, 2, 4))]


@register("reshape")
def _(rng, i):
    s, t = (((6,), (2, 3)), ((2, 3, 4), (4, 6)), ((2, 2, 2), (8,)))[i]
    return (lambda a: ops.reshape(a, t)), [rng.standard_normal(s)]


@register("transpose")
def _(rng, i):
    s, axes = (((2, 3), (1, 0)), ((2, 3, 4), (2, 0, 1)), ((1, 2, 3, 2), (0, 2, 3, 1)))[i]
    return (lambda a: ops.transpose(a, axes)), [rng.standard_normal(s)]


@register("concat")
def _(rng, i):
    axis = (0, 1, 2)[i]
    s1, s2 = [2, 3, 2], [2, 3, 2]
    s2[axis] = 1 + i
    return (lambda a, b: ops.concat([a, b], axis=axis)), [rng.standard_normal(s1), rng.standard_normal(s2)]


@register("take_rows")
def _(rng, i):
    n, d = [(4, 3), (5, 2), (3, 6)][i]
    ids = rng.integers(0, n, size=n + 2)
    return (lambda t: ops.take_rows(t, ids)), [rng.standard_normal((n, d))]


@register("matmul")
def _(rng, i):
    a, b = (((3, 4), (4, 2)), ((1, 5), (5, 3)), ((4, 4), (4, 1)))[i]
    return ops.matmul, [rng.standard_normal(a), rng.standard_normal(b)]


@register("linear")
def _(rng, i):
    xs, din, dout = (((4, 3), 3, 2), ((2, 5, 4), 4, 3), ((1, 6), 6, 6))[i]
    return ops.linear, [rng.standard_normal(xs), rng.standard_normal((dout, din)), rng.standard_normal(dout)]


@register("global_avg_pool")
def _(rng, i):
    s = ((1, 2, 3, 3), (2, 3, 4, 2), (2, 1, 5, 5))[i]
    return ops.global_avg_pool, [rng.standard_normal(s)]


@register("layer_norm_channels")
def _(rng, i):
    s = ((1, 3, 2, 2), (2, 4, 3, 1), (2, 8, 2, 3))[i]
    c = s[1]
    return ops.layer_norm_channels, [rng.standard_normal(s) * 2 + 1, 1 + 0.3 * rng.standard_normal(c),
                                     rng.standard_normal(c)]


# -- convolution, pooling, resizing ----------------------------------------------

@register("conv2d_dense")
def _(rng, i):
    cin, cout, k, stride, pad, hw = ((2, 3, 3, 1, 1, 5), (3, 2, 3, 2, 1, 6), (2, 2, 1, 1, 0, 4))[i]
    fn = lambda x, w, b: ops.conv2d(x, w, b, stride=stride, padding=pad)
    return fn, [rng.standard_normal((2, cin, hw, hw)), rng.standard_normal((cout, cin, k, k)),
                rng.standard_normal(cout)]


@register("conv2d_depthwise")
def _(rng, i):
    c, k, stride, pad, hw = ((3, 7, 1, 3, 5), (2, 7, 2, 3, 6), (4, 3, 1, 1, 4))[i]
    fn = lambda x, w, b: ops.conv2d(x, w, b, stride=stride, padding=pad, groups=c)
    return fn, [rng.standard_normal((2, c, hw, hw)), rng.standard_normal((c, 1, k, k)), rng.standard_normal(c)]


@register("conv2d_grouped")
def _(rng, i):
    cin, cout, g, k, stride = ((4, 4, 2, 3, 1), (6, 3, 3, 3, 2), (4, 8, 4, 1, 1))[i]
    fn = lambda x, w: ops.conv2d(x, w, None, stride=stride, padding=k // 2, groups=g)
    return fn, [rng.standard_normal((1, cin, 5, 4)), rng.standard_normal((cout, cin // g, k, k))]


@register("max_pool2d")
def _(rng, i):
    k, stride, pad, s = ((3, 1, 1, (1, 2, 4, 4)), (3, 2, 1, (2, 1, 5, 5)), (2, 2, 0, (1, 3, 4, 6)))[i]
    # distinct values spaced far beyond the difference step so the argmax is stable
    x = rng.permutation(np.prod(s)).reshape(s) * 0.1 + rng.uniform(0, 0.01, s)
    return (lambda a: ops.max_pool2d(a, k, stride, pad)), [x]


@register("bilinear_resize")
def _(rng, i):
    s, out = (((1, 2, 4, 4), (8, 8)), ((2, 1, 3, 5), (2, 7)), ((1, 2, 8, 8), (3, 3)))[i]
    return (lambda a: ops.bilinear_resize(a, *out)), [rng.standard_normal(s)]


@register("gather_at")
def _(rng, i):
    s = ((1, 3, 4, 4), (2, 2, 3, 5), (2, 4, 2, 2))[i]
    locs = [(int(rng.integers(s[0])), int(rng.integers(s[2])), int(rng.integers(s[3]))) for _ in range(4)]
    locs.append(locs[0])  # repeated location accumulates
    return (lambda a: ops.gather_at(a, locs)), [rng.standard_normal(s)]


@register("masks_from_embeddings")
def _(rng, i):
    n, c, h, w, k = ((1, 3, 4, 4, 2), (2, 4, 3, 5, 3), (3, 2, 2, 2, 4))[i]
    bi = rng.integers(0, n, size=k)
    return (lambda f, e: ops.masks_from_embeddings(f, e, bi)), [rng.standard_normal((n, c, h, w)),
                                                                 rng.standard_normal((k, c))]


# -- losses ----------------------------------------------------------------------

@register("focal_loss", kind="block")
def _(rng, i):
    shapes = [((1, 2, 4, 4),), ((2, 3, 4, 4), (2, 3, 2, 2)), ((1, 1, 6, 6), (1, 1, 3, 3), (1, 1, 2, 2))][i]
    targets = []
    for s in shapes:
        t = rng.uniform(0, 0.9, s)
        t.reshape(-1)[rng.choice(t.size, 2, replace=False)] = 1.0
        targets.append(t)
    fn = lambda *logits: focal_loss(list(logits), targets)
    return fn, [rng.standard_normal(s) * 2 for s in shapes]


@register("mask_bce", kind="block")
def _(rng, i):
    s = ((1, 4, 4), (2, 3, 5), (3, 2, 2))[i]
    g = (rng.uniform(size=s) > 0.5).astype(float)
    return (lambda x: mask_losses(x, g)[0]), [rng.standard_normal(s) * 2]


@register("mask_dice", kind="block")
def _(rng, i):
    s = ((1, 4, 4), (2, 3, 5), (3, 2, 2))[i]
    g = (rng.uniform(size=s) > 0.5).astype(float)
    return (lambda x: mask_losses(x, g)[1]), [rng.standard_normal(s) * 2]


# -- composite blocks ------------------------------------------------------------

@register("se_layer", kind="block", max_entries=48)
def _(rng, i):
    c, r, gate = ((16, 16, "sigmoid"), (32, 16, "sigmoid"), (8, 4, "sigmoid"))[i]
    params = _randomize(blocks.init_se(rng, c, r), rng)
    fn, ws = _with_params(params, lambda x, p: blocks.se_layer(x, p, gate))
    return fn, [rng.standard_normal((2, c, 3, 3))] + ws


@register("convnext_se_block", kind="block", max_entries=48)
def _(rng, i):
    c, use_se, hw = ((4, True, 5), (8, True, 4), (4, False, 6))[i]
    params = _randomize(blocks.init_convnext_block(rng, c, use_se=use_se, reduction=4), rng)
    fn, ws = _with_params(params, blocks.convnext_se_block)
    return fn, [rng.standard_normal((1, c, hw, hw))] + ws


@register("light_head", kind="block", max_entries=48)
def _(rng, i):
    c, out, kind, hw = ((4, 3, "depthwise", 5), (3, 2, "dense", 4), (6, 4, "depthwise", 3))[i]
    params = _randomize(blocks.init_light_head(rng, c, out, kind=kind), rng)
    fn, ws = _with_params(params, blocks.light_head)
    return fn, [rng.standard_normal((1, c, hw, hw))] + ws


@register("pyramid_extension", kind="block", max_entries=48)
def _(rng, i):
    cin, cout, hw = ((4, 4, 4), (3, 5, 5), (2, 2, 8))[i]
    params = _randomize(init_extension(rng, cin, cout, np.float64), rng)
    fn, ws = _with_params(params, lambda x, p: ops.concat(
        [ops.reshape(t, (-1,)) for t in extend_pyramid(x, p)], axis=0))
    return fn, [rng.standard_normal((1, cin, hw, hw))] + ws


@register("decoder", kind="block", max_entries=24)
def _(rng, i):
    d, sizes = ((8, (8, 4, 2)), (8, (6, 3, 2)), (16, (4, 2, 1)))[i]
    chans = {3: 3, 4: 4, 5: 5}
    dec = ConvNeXtUNet(DecoderConfig([1, 1, 1], [d, d, d], se_reduction=8), chans)
    params = _randomize(dec.init_params(rng, np.float64), rng)
    names = list(params)

    def fn(l3, l4, l5, *ws):
        out = dec.forward({3: l3, 4: l4, 5: l5}, BlockParams(zip(names, ws)))
        return ops.concat([ops.reshape(out[l], (-1,)) for l in (3, 4, 5)], axis=0)

    pyr = [rng.standard_normal((1, chans[l], s, s)) for l, s in zip((3, 4, 5), sizes)]
    return fn, pyr + [params[n] for n in names]


@register("mask_feature_head", kind="block", max_entries=24)
def _(rng, i):
    width, widths, hw = ((4, {3: 4, 4: 4, 5: 4}, 16), (4, {3: 4, 4: 6, 5: 8}, 16), (3, {3: 3, 4: 3, 5: 5}, 24))[i]
    params = _randomize(init_heads(rng, width, 2, 3, widths, dtype=np.float64), rng)
    names = [n for n in params if n.startswith(("mask.", "mask_inputs."))]

    def fn(l3, l4, l5, *ws):
        return mask_feature_forward({3: l3, 4: l4, 5: l5}, BlockParams(zip(names, ws)), (hw, hw))

    pyr = [rng.standard_normal((1, widths[l], hw // 2 ** l or 1, hw // 2 ** l or 1)) for l in (3, 4, 5)]
    return fn, pyr + [params[n] for n in names]


@register("mask_embedding_generator", kind="block", max_entries=48)
def _(rng, i):
    k, e, with_class = ((3, 4, True), (5, 3, True), (2, 6, False))[i]
    params = _randomize(init_generator(rng, 4, e, np.float64), rng)
    ids = rng.integers(0, 4, size=k)
    names = list(params)

    def fn(center, *ws):
        p = BlockParams(zip(names, ws))
        cls = ops.take_rows(p["class_table"], ids) if with_class else None
        return generate_mask_embeddings(center, cls, p.scope("mlp"))

    return fn, [rng.standard_normal((k, e))] + [params[n] for n in names]


@register("tiny_backbone", kind="block", max_entries=16)
def _(rng, i):
    hw = ((16, 16), (16, 24), (24, 16))[i]
    bb = TinyBackbone(channels=(8, 8, 8, 8), depth=1, se_reduction=8)
    params = _randomize(bb.init_params(rng, np.float64), rng, scale=0.3)
    names = list(params)

    def fn(x, *ws):
        out = bb.forward(x, BlockParams(zip(names, ws)))
        return ops.concat([ops.reshape(out[l], (-1,)) for l in sorted(out)], axis=0)

    return fn, [rng.standard_normal((1, 3) + hw)] + [params[n] for n in names]


# -- driver ----------------------------------------------------------------------

def run_case(case: GradCase, seed: int = 0, n_shapes: int = N_SHAPES) -> CaseResult:
    res = CaseResult(case.name, case.kind)
    for i in range(n_shapes):
        rng = np.random.default_rng([seed, i, len(case.name)])
        fn, inputs = case.build(rng, i)
        inputs = [np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64) for a in inputs]
        res.errors.append(check_gradients(fn, inputs, seed=seed + i, max_entries=case.max_entries))
    return res


def run_suite(seed: int = 0, cases=None, names=None) -> list[CaseResult]:
    cases = list(REGISTRY.values()) if cases is None else list(cases)
    if names:
        unknown = set(names) - {c.name for c in cases}
        if unknown:
            raise KeyError(f"unknown gradient cases: {sorted(unknown)}")
        cases = [c for c in cases if c.name in names]
    return [run_case(c, seed) for c in cases]


def format_table(results: list[CaseResult], tol: float = TOLERANCE) -> str:
    width = max(len(r.name) for r in results) if results else 4
    lines = [f"{'case':<{width}}  kind   shapes  max_rel_err  status"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.kind:<5}  {len(r.errors):>6}  {r.max_error:11.3e}  "
                     f"{'PASS' if r.passed(tol) else 'FAIL'}")
    return "\n".join(lines)
