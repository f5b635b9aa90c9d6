"""Backbones producing the L3..L5 feature pyramid, plus the L6/L7 extension."""

from __future__ import annotations

import math

import numpy as np

from .blocks import (
    Act,
    BlockParams,
    Branches,
    Conv2d,
    Dense,
    GlobalPool,
    Norm,
    Pool,
    Sequential,
    conv,
    convnext_se_block,
    cost_of,
    describe_convnext_block,
    init_conv,
    init_convnext_block,
    init_linear,
    init_norm,
    norm,
    output_shape,
)
from .numerics import Tensor, ops

TINY_CHANNELS = (16, 32, 64, 96)
TINY_DEPTH = 2
RESNET50_LAYERS = (3, 4, 6, 3)
RESNET50_WIDTHS = (64, 128, 256, 512)


class FeaturePyramid(dict):
    """Mapping level -> N x C x H x W tensor, level l at stride 2**l."""

    def __init__(self, *args, **kw):
        super().__init__(*args, **kw)
        levels = sorted(self)
        if levels and levels != list(range(levels[0], levels[-1] + 1)):
            raise ValueError(f"pyramid levels must be contiguous, got {levels}")

    @property
    def levels(self) -> list[int]:
        return sorted(self)

    def require(self, *levels: int) -> None:
        missing = [l for l in levels if l not in self]
        if missing:
            raise KeyError(f"pyramid is missing level(s) {missing}; has {self.levels}")


def level_size(size: int, level: int) -> int:
    return math.ceil(size / 2 ** level)


class TinyBackbone:
    """Stem plus four stages of ConvNeXt-SE blocks; trains on a CPU in minutes."""

    kind = "tiny"

    def __init__(self, in_channels: int = 3, channels=TINY_CHANNELS, depth: int = TINY_DEPTH,
                 gate_kind: str = "sigmoid", se_reduction: int = 16):
        self.in_channels = in_channels
        self.stage_channels = tuple(channels)
        self.depth = depth
        self.gate_kind = gate_kind
        self.se_reduction = se_reduction
        self.channels = {3: channels[1], 4: channels[2], 5: channels[3]}

    def init_params(self, rng: np.random.Generator, dtype=np.float32) -> BlockParams:
        p = BlockParams()
        c0 = self.stage_channels[0]
        p.nest("stem.conv", init_conv(rng, self.in_channels, c0, 3, dtype=dtype))
        p.nest("stem.norm", init_norm(c0, dtype))
        prev = c0
        for s, c in enumerate(self.stage_channels):
            p.nest(f"stages.{s}.down.conv", init_conv(rng, prev, c, 3, dtype=dtype))
            p.nest(f"stages.{s}.down.norm", init_norm(c, dtype))
            for b in range(self.depth):
                p.nest(f"stages.{s}.blocks.{b}",
                       init_convnext_block(rng, c, reduction=self.se_reduction, dtype=dtype))
            prev = c
        return p

    def forward(self, x, params: BlockParams) -> FeaturePyramid:
        x = norm(conv(x, params.scope("stem.conv"), stride=2, padding=1), params.scope("stem.norm"))
        taps = {}
        for s in range(len(self.stage_channels)):
            sp = params.scope(f"stages.{s}")
            x = norm(conv(x, sp.scope("down.conv"), stride=2, padding=1), sp.scope("down.norm"))
            for b in range(self.depth):
                x = convnext_se_block(x, sp.scope(f"blocks.{b}"), self.gate_kind)
            taps[s + 2] = x
        return FeaturePyramid({l: taps[l] for l in (3, 4, 5)})

    def stage_descriptions(self):
        c0 = self.stage_channels[0]
        out = [(None, Sequential((Conv2d(self.in_channels, c0, 3, 2, 1), Norm(c0))))]
        prev = c0
        for s, c in enumerate(self.stage_channels):
            layers = [Conv2d(prev, c, 3, 2, 1), Norm(c)]
            layers += [describe_convnext_block(c, reduction=self.se_reduction)] * self.depth
            out.append((s + 2 if s + 2 >= 3 else None, Sequential(tuple(layers))))
            prev = c
        return out


class ResNet50:
    """Standard bottleneck ResNet50 (BN folded to per-channel affine at inference)."""

    kind = "resnet50"

    def __init__(self, in_channels: int = 3, include_classifier: bool = True, num_classes: int = 1000):
        self.in_channels = in_channels
        self.include_classifier = include_classifier
        self.num_classes = num_classes
        self.channels = {3: 512, 4: 1024, 5: 2048}

    def init_params(self, rng: np.random.Generator, dtype=np.float32) -> BlockParams:
        p = BlockParams()
        p.nest("stem.conv", init_conv(rng, self.in_channels, 64, 7, bias=False, dtype=dtype))
        p.nest("stem.bn", init_norm(64, dtype))
        c_in = 64
        for s, (n_blocks, width) in enumerate(zip(RESNET50_LAYERS, RESNET50_WIDTHS)):
            for b in range(n_blocks):
                pre = f"layers.{s}.{b}"
                p.nest(f"{pre}.conv1", init_conv(rng, c_in, width, 1, bias=False, dtype=dtype))
                p.nest(f"{pre}.bn1", init_norm(width, dtype))
                p.nest(f"{pre}.conv2", init_conv(rng, width, width, 3, bias=False, dtype=dtype))
                p.nest(f"{pre}.bn2", init_norm(width, dtype))
                p.nest(f"{pre}.conv3", init_conv(rng, width, width * 4, 1, bias=False, dtype=dtype))
                p.nest(f"{pre}.bn3", init_norm(width * 4, dtype))
                if b == 0:
                    p.nest(f"{pre}.down.conv", init_conv(rng, c_in, width * 4, 1, bias=False, dtype=dtype))
                    p.nest(f"{pre}.down.bn", init_norm(width * 4, dtype))
                c_in = width * 4
        if self.include_classifier:
            p.nest("fc", init_linear(rng, 2048, self.num_classes, dtype))
        return p

    @staticmethod
    def _bn(x, p):
        c = x.shape[1]
        return ops.add(ops.mul(x, ops.reshape(p["gamma"], (1, c, 1, 1))), ops.reshape(p["beta"], (1, c, 1, 1)))

    def forward(self, x, params: BlockParams) -> FeaturePyramid:
        x = ops.relu(self._bn(conv(x, params.scope("stem.conv"), stride=2, padding=3), params.scope("stem.bn")))
        x = ops.max_pool2d(x, 3, 2, 1)
        taps = {}
        for s, n_blocks in enumerate(RESNET50_LAYERS):
            for b in range(n_blocks):
                bp = params.scope(f"layers.{s}.{b}")
                stride = 2 if (b == 0 and s > 0) else 1
                y = ops.relu(self._bn(conv(x, bp.scope("conv1")), bp.scope("bn1")))
                y = ops.relu(self._bn(conv(y, bp.scope("conv2"), stride=stride, padding=1), bp.scope("bn2")))
                y = self._bn(conv(y, bp.scope("conv3")), bp.scope("bn3"))
                if b == 0:
                    x = self._bn(conv(x, bp.scope("down.conv"), stride=stride), bp.scope("down.bn"))
                x = ops.relu(ops.add(x, y))
            taps[s + 2] = x
        return FeaturePyramid({l: taps[l] for l in (3, 4, 5)})

    def stage_descriptions(self):
        out = [(None, Sequential((Conv2d(self.in_channels, 64, 7, 2, 3, bias=False), Norm(64), Act(),
                                  Pool(3, 2, 1))))]
        c_in = 64
        for s, (n_blocks, width) in enumerate(zip(RESNET50_LAYERS, RESNET50_WIDTHS)):
            blocks = []
            for b in range(n_blocks):
                stride = 2 if (b == 0 and s > 0) else 1
                main = Sequential((
                    Conv2d(c_in, width, 1, bias=False), Norm(width), Act(),
                    Conv2d(width, width, 3, stride, 1, bias=False), Norm(width), Act(),
                    Conv2d(width, width * 4, 1, bias=False), Norm(width * 4)))
                short = (Sequential((Conv2d(c_in, width * 4, 1, stride, bias=False), Norm(width * 4)))
                         if b == 0 else None)
                blocks += [Branches(main, short), Act()]
                c_in = width * 4
            out.append((s + 2 if s + 2 >= 3 else None, Sequential(tuple(blocks))))
        if self.include_classifier:
            out.append((None, Sequential((GlobalPool(), Dense(2048, self.num_classes)))))
        return out


def build_backbone(kind: str, in_channels: int = 3, **kw):
    if kind == "tiny":
        return TinyBackbone(in_channels, **kw)
    if kind == "resnet50":
        return ResNet50(in_channels, **kw)
    raise ValueError(f"unknown backbone kind {kind!r}; expected 'tiny' or 'resnet50'")


def backbone_cost(backbone, input_shape):
    """Total CostReport and the tapped level shapes, by shape arithmetic only."""
    shape = tuple(input_shape)
    total = None
    taps = {}
    for level, desc in backbone.stage_descriptions():
        c = cost_of(desc, shape)
        shape = output_shape(desc, shape)
        total = c if total is None else total + c
        if level is not None:
            taps[level] = shape
    return total, taps


# -- L6 / L7 ---------------------------------------------------------------------

def init_extension(rng, in_channels: int, out_channels: int | None = None, dtype=np.float32) -> BlockParams:
    out_channels = out_channels or in_channels
    p = BlockParams()
    p.nest("l6.dw", init_conv(rng, in_channels, in_channels, 7, groups=in_channels, dtype=dtype))
    p.nest("l6.proj", init_conv(rng, in_channels, out_channels, 1, dtype=dtype))
    p.nest("l7.dw", init_conv(rng, out_channels, out_channels, 7, groups=out_channels, dtype=dtype))
    p.nest("l7.proj", init_conv(rng, out_channels, out_channels, 1, dtype=dtype))
    return p


def extend_pyramid(l5, params: BlockParams) -> tuple[Tensor, Tensor]:
    """Two stride-2 7x7 depthwise convs (each with a 1x1 projection) on top of L5."""
    if min(l5.shape[2:]) < 2:
        raise ValueError(f"L5 spatial dims must be >= 2 to extend, got {l5.shape[2:]}")
    l6 = conv(conv(l5, params.scope("l6.dw"), stride=2, padding=3, groups=l5.shape[1]), params.scope("l6.proj"))
    l7 = conv(conv(l6, params.scope("l7.dw"), stride=2, padding=3, groups=l6.shape[1]), params.scope("l7.proj"))
    return l6, l7


def describe_extension(in_channels: int, out_channels: int | None = None) -> dict[int, Sequential]:
    out_channels = out_channels or in_channels
    return {
        6: Sequential((Conv2d(in_channels, in_channels, 7, 2, 3, groups=in_channels),
                       Conv2d(in_channels, out_channels, 1))),
        7: Sequential((Conv2d(out_channels, out_channels, 7, 2, 3, groups=out_channels),
                       Conv2d(out_channels, out_channels, 1))),
    }
