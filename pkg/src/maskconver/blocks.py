"""Composite network blocks and their analytic cost descriptions.

Each block comes as a triple: ``init_*`` builds a :class:`BlockParams`,
the forward function consumes one, and ``describe_*`` returns a layer
description that :func:`cost_of` turns into a :class:`CostReport` without
touching any feature tensor.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import tensor_io
from .numerics import Tensor, ops

LN_EPS = 1e-6
LAYER_SCALE_INIT = 1e-6
SE_REDUCTION = 16
# normalization and activation cost, per element
NORM_ACT_FLOPS = 5
# bilinear resize cost, per output element (4 taps, multiply-add each)
RESIZE_FLOPS = 8


class BlockParams(dict):
    """Flat mapping from hierarchical dotted names to parameter tensors."""

    def scope(self, prefix: str) -> "BlockParams":
        """View of the entries under ``prefix.``, names relative to it."""
        head = prefix + "."
        n = len(head)
        sub = BlockParams((k[n:], v) for k, v in self.items() if k.startswith(head))
        if not sub:
            raise KeyError(f"no parameters under {prefix!r}")
        return sub

    def nest(self, prefix: str, child: "BlockParams") -> "BlockParams":
        for k, v in child.items():
            name = f"{prefix}.{k}"
            if name in self:
                raise KeyError(f"duplicate parameter name {name!r}")
            self[name] = v
        return self

    def num_params(self) -> int:
        return int(sum(t.size for t in self.values()))

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.items()}

    def copy_arrays(self) -> "BlockParams":
        return BlockParams((k, Tensor(t.data.copy(), requires_grad=t.requires_grad)) for k, t in self.items())

    def astype(self, dtype) -> "BlockParams":
        return BlockParams((k, Tensor(t.data.astype(dtype), requires_grad=t.requires_grad))
                           for k, t in self.items())

    def save(self, directory: str | os.PathLike) -> None:
        """Write one MCT1 file per tensor plus ``manifest.json``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        manifest = {}
        for i, (name, t) in enumerate(sorted(self.items())):
            fname = f"{i:04d}.mct"
            tensor_io.save(d / fname, t.data.astype(np.float32))
            manifest[name] = fname
        (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))

    @classmethod
    def load(cls, directory: str | os.PathLike, dtype=np.float32) -> "BlockParams":
        d = Path(directory)
        manifest = json.loads((d / "manifest.json").read_text())
        return cls((name, Tensor(tensor_io.load(d / fname).astype(dtype), requires_grad=True))
                   for name, fname in manifest.items())


def _param(arr: np.ndarray, dtype) -> Tensor:
    return Tensor(np.asarray(arr, dtype=dtype), requires_grad=True)


def init_conv(rng: np.random.Generator, c_in: int, c_out: int, k: int, groups: int = 1,
              bias: bool = True, dtype=np.float64) -> BlockParams:
    fan_in = (c_in // groups) * k * k
    p = BlockParams(weight=_param(rng.standard_normal((c_out, c_in // groups, k, k)) / np.sqrt(fan_in), dtype))
    if bias:
        p["bias"] = _param(np.zeros(c_out), dtype)
    return p


def init_linear(rng: np.random.Generator, d_in: int, d_out: int, dtype=np.float64) -> BlockParams:
    return BlockParams(weight=_param(rng.standard_normal((d_out, d_in)) / np.sqrt(d_in), dtype),
                       bias=_param(np.zeros(d_out), dtype))


def init_norm(c: int, dtype=np.float64) -> BlockParams:
    return BlockParams(gamma=_param(np.ones(c), dtype), beta=_param(np.zeros(c), dtype))


def conv(x, p: BlockParams, stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    return ops.conv2d(x, p["weight"], p.get("bias"), stride=stride, padding=padding, groups=groups)


def norm(x, p: BlockParams) -> Tensor:
    return ops.layer_norm_channels(x, p["gamma"], p["beta"], LN_EPS)


# -- cost accounting -------------------------------------------------------------

@dataclass(frozen=True)
class CostReport:
    params: int = 0
    flops: int = 0

    def __add__(self, other: "CostReport") -> "CostReport":
        return CostReport(self.params + other.params, self.flops + other.flops)

    def __mul__(self, k: int) -> "CostReport":
        return CostReport(self.params * k, self.flops * k)

    def as_dict(self) -> dict[str, int]:
        return {"params": self.params, "flops": self.flops}


Shape = tuple[int, int, int, int]


@dataclass(frozen=True)
class Conv2d:
    c_in: int
    c_out: int
    kernel: int
    stride: int = 1
    padding: int = 0
    groups: int = 1
    bias: bool = True

    def cost(self, shape: Shape) -> tuple[CostReport, Shape]:
        n, c, h, w = shape
        if c != self.c_in:
            raise ValueError(f"Conv2d expects {self.c_in} channels, got {c}")
        ho = ops.conv_output_size(h, self.kernel, self.stride, self.padding)
        wo = ops.conv_output_size(w, self.kernel, self.stride, self.padding)
        params = self.kernel * self.kernel * (self.c_in // self.groups) * self.c_out
        params += self.c_out if self.bias else 0
        flops = 2 * self.kernel * self.kernel * (self.c_in // self.groups) * self.c_out * ho * wo * n
        return CostReport(params, flops), (n, self.c_out, ho, wo)


@dataclass(frozen=True)
class Dense:
    """Linear layer applied to an N x C feature vector (after pooling)."""
    d_in: int
    d_out: int

    def cost(self, shape):
        rows = shape[0]
        if shape[1] != self.d_in:
            raise ValueError(f"Dense expects {self.d_in} features, got {shape[1]}")
        return (CostReport(self.d_in * self.d_out + self.d_out, 2 * self.d_in * self.d_out * rows),
                (rows, self.d_out, 1, 1))


@dataclass(frozen=True)
class Norm:
    channels: int
    affine: bool = True

    def cost(self, shape):
        return CostReport(2 * self.channels if self.affine else 0, NORM_ACT_FLOPS * int(np.prod(shape))), shape


@dataclass(frozen=True)
class Act:
    def cost(self, shape):
        return CostReport(0, NORM_ACT_FLOPS * int(np.prod(shape))), shape


@dataclass(frozen=True)
class Scale:
    """Per-channel learned multiplier (layer scale)."""
    channels: int

    def cost(self, shape):
        return CostReport(self.channels, int(np.prod(shape))), shape


@dataclass(frozen=True)
class Pool:
    kernel: int
    stride: int
    padding: int = 0

    def cost(self, shape):
        n, c, h, w = shape
        ho = ops.conv_output_size(h, self.kernel, self.stride, self.padding)
        wo = ops.conv_output_size(w, self.kernel, self.stride, self.padding)
        return CostReport(0, n * c * ho * wo * self.kernel * self.kernel), (n, c, ho, wo)


@dataclass(frozen=True)
class GlobalPool:
    def cost(self, shape):
        n, c, h, w = shape
        return CostReport(0, n * c * h * w), (n, c, 1, 1)


@dataclass(frozen=True)
class Resize:
    out_h: int
    out_w: int

    def cost(self, shape):
        n, c, _, _ = shape
        out = (n, c, self.out_h, self.out_w)
        return CostReport(0, RESIZE_FLOPS * int(np.prod(out))), out


@dataclass(frozen=True)
class Sequential:
    layers: tuple = field(default_factory=tuple)

    def cost(self, shape):
        total = CostReport()
        for layer in self.layers:
            c, shape = layer.cost(shape)
            total = total + c
        return total, shape


@dataclass(frozen=True)
class Residual:
    """``x + body(x)``; the add counts one FLOP per element."""
    body: object

    def cost(self, shape):
        c, out = self.body.cost(shape)
        if out != shape:
            raise ValueError(f"residual branch changes shape {shape} -> {out}")
        return c + CostReport(0, int(np.prod(shape))), shape


@dataclass(frozen=True)
class Branches:
    """``main(x) + shortcut(x)``; an identity shortcut is ``None``."""
    main: object
    shortcut: object = None

    def cost(self, shape):
        c, out = self.main.cost(shape)
        if self.shortcut is not None:
            c2, out2 = self.shortcut.cost(shape)
            if out2 != out:
                raise ValueError(f"branch shapes differ: {out} vs {out2}")
            c = c + c2
        elif out != shape:
            raise ValueError(f"identity shortcut with shape change {shape} -> {out}")
        return c + CostReport(0, int(np.prod(out))), out


@dataclass(frozen=True)
class Gate:
    """Squeeze-and-excitation: gate from a pooled branch, multiplied back in."""
    branch: object

    def cost(self, shape):
        c, _ = self.branch.cost(shape)
        return c + CostReport(0, int(np.prod(shape))), shape


def cost_of(desc, shape: Sequence[int]) -> CostReport:
    """Exact params/FLOPs of a described block at an N x C x H x W input."""
    return desc.cost(tuple(int(s) for s in shape))[0]


def output_shape(desc, shape: Sequence[int]) -> Shape:
    return desc.cost(tuple(int(s) for s in shape))[1]


# -- squeeze-and-excitation ------------------------------------------------------

def init_se(rng, channels: int, reduction: int = SE_REDUCTION, dtype=np.float64) -> BlockParams:
    if channels % reduction:
        raise ValueError(f"SE channels {channels} not divisible by reduction {reduction}")
    p = BlockParams()
    p.nest("fc1", init_linear(rng, channels, channels // reduction, dtype))
    p.nest("fc2", init_linear(rng, channels // reduction, channels, dtype))
    return p


def se_layer(x, params: BlockParams, gate_kind: str = "sigmoid") -> Tensor:
    """Rescale channels by a gate computed from their spatial means."""
    s = ops.global_avg_pool(x)
    s = ops.gelu(ops.linear(s, params["fc1.weight"], params["fc1.bias"]))
    s = ops.linear(s, params["fc2.weight"], params["fc2.bias"])
    gate = ops.pointwise_activation(gate_kind, s)
    n, c = gate.shape
    return ops.mul(x, ops.reshape(gate, (n, c, 1, 1)))


def describe_se(channels: int, reduction: int = SE_REDUCTION) -> Gate:
    hidden = channels // reduction
    return Gate(Sequential((GlobalPool(), Dense(channels, hidden), Act(), Dense(hidden, channels), Act())))


# -- ConvNeXt(-SE) block ---------------------------------------------------------

def init_convnext_block(rng, channels: int, use_se: bool = True, reduction: int = SE_REDUCTION,
                        expansion: int = 4, dtype=np.float64) -> BlockParams:
    wide = channels * expansion
    p = BlockParams()
    p.nest("dw", init_conv(rng, channels, channels, 7, groups=channels, dtype=dtype))
    p.nest("norm", init_norm(channels, dtype))
    p.nest("pw1", init_conv(rng, channels, wide, 1, dtype=dtype))
    if use_se:
        p.nest("se", init_se(rng, wide, reduction, dtype))
    p.nest("pw2", init_conv(rng, wide, channels, 1, dtype=dtype))
    p["layer_scale"] = _param(np.full(channels, LAYER_SCALE_INIT), dtype)
    return p


def convnext_se_block(x, params: BlockParams, gate_kind: str = "sigmoid") -> Tensor:
    """Residual ConvNeXt block; SE (if present) sits at the expanded width."""
    c = x.shape[1]
    y = conv(x, params.scope("dw"), padding=3, groups=c)
    y = norm(y, params.scope("norm"))
    y = ops.gelu(conv(y, params.scope("pw1")))
    if "se.fc1.weight" in params:
        y = se_layer(y, params.scope("se"), gate_kind)
    y = conv(y, params.scope("pw2"))
    y = ops.mul(y, ops.reshape(params["layer_scale"], (1, c, 1, 1)))
    return ops.add(x, y)


def describe_convnext_block(channels: int, use_se: bool = True, reduction: int = SE_REDUCTION,
                            expansion: int = 4) -> Residual:
    wide = channels * expansion
    body = [Conv2d(channels, channels, 7, padding=3, groups=channels), Norm(channels),
            Conv2d(channels, wide, 1), Act()]
    if use_se:
        body.append(describe_se(wide, reduction))
    body += [Conv2d(wide, channels, 1), Scale(channels)]
    return Residual(Sequential(tuple(body)))


# -- light prediction head -------------------------------------------------------

HEAD_DEPTH = 2


def init_light_head(rng, channels: int, out_channels: int, depth: int = HEAD_DEPTH,
                    kind: str = "depthwise", out_bias: float = 0.0, dtype=np.float64) -> BlockParams:
    if depth < 1:
        raise ValueError("light head depth must be >= 1")
    p = BlockParams()
    for i in range(depth):
        if kind == "depthwise":
            p.nest(f"units.{i}.conv", init_conv(rng, channels, channels, 7, groups=channels, dtype=dtype))
        elif kind == "dense":
            p.nest(f"units.{i}.conv", init_conv(rng, channels, channels, 3, dtype=dtype))
        else:
            raise ValueError(f"unknown head kind {kind!r}")
        p.nest(f"units.{i}.norm", init_norm(channels, dtype))
    p.nest("proj", init_conv(rng, channels, out_channels, 1, dtype=dtype))
    p["proj.bias"].data[...] = out_bias
    return p


def light_head(x, params: BlockParams) -> Tensor:
    """Stack of [conv -> layer norm -> GeLU] units and a linear 1x1 projection.

    Units use 7x7 depthwise convs unless the params were built with
    ``kind="dense"`` (3x3 full convs), which is detected from the weight shape.
    """
    c = x.shape[1]
    i = 0
    while f"units.{i}.conv.weight" in params:
        w = params[f"units.{i}.conv.weight"]
        k = w.shape[-1]
        groups = c if w.shape[1] == 1 and c > 1 else 1
        x = ops.conv2d(x, w, params[f"units.{i}.conv.bias"], padding=k // 2, groups=groups)
        x = ops.gelu(norm(x, params.scope(f"units.{i}.norm")))
        i += 1
    return conv(x, params.scope("proj"))


def describe_light_head(channels: int, out_channels: int, depth: int = HEAD_DEPTH,
                        kind: str = "depthwise") -> Sequential:
    layers = []
    for _ in range(depth):
        if kind == "depthwise":
            layers.append(Conv2d(channels, channels, 7, padding=3, groups=channels))
        else:
            layers.append(Conv2d(channels, channels, 3, padding=1))
        layers += [Norm(channels), Act()]
    layers.append(Conv2d(channels, out_channels, 1))
    return Sequential(tuple(layers))


def parameter_count(params: Iterable[Tensor]) -> int:
    return int(sum(t.size for t in params))
