"""ConvNeXt-UNet pixel decoder over L5 -> L3."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backbone import FeaturePyramid
from .blocks import (
    SE_REDUCTION,
    BlockParams,
    CostReport,
    Conv2d,
    Norm,
    Resize,
    Sequential,
    conv,
    convnext_se_block,
    cost_of,
    describe_convnext_block,
    init_conv,
    init_convnext_block,
    init_norm,
    norm,
)
from .numerics import ops

LEVELS = (5, 4, 3)


@dataclass
class DecoderConfig:
    N: list[int] = field(default_factory=lambda: [2, 1, 1])
    D: list[int] = field(default_factory=lambda: [32, 32, 32])
    use_se: bool = True
    se_reduction: int = SE_REDUCTION

    def __post_init__(self):
        self.N = [int(n) for n in self.N]
        self.D = [int(d) for d in self.D]
        if len(self.N) != 3 or len(self.D) != 3:
            raise ValueError("decoder N and D must each list three values [L5, L4, L3]")
        if any(n < 1 for n in self.N):
            raise ValueError(f"decoder repeats must be >= 1, got N={self.N}")
        for d in self.D:
            if d < 8 or d % self.se_reduction:
                raise ValueError(f"decoder width {d} must be >= 8 and divisible by {self.se_reduction}")

    def to_dict(self) -> dict:
        return {"N": list(self.N), "D": list(self.D), "use_se": self.use_se}

    @classmethod
    def from_dict(cls, d: dict, se_reduction: int = SE_REDUCTION) -> "DecoderConfig":
        return cls(N=d["N"], D=d["D"], use_se=bool(d.get("use_se", True)), se_reduction=se_reduction)

    def width(self, level: int) -> int:
        return self.D[LEVELS.index(level)]

    def repeats(self, level: int) -> int:
        return self.N[LEVELS.index(level)]


class ConvNeXtUNet:
    """Per level: project the backbone feature, add the upsampled coarser output, run N blocks.

    Each 1x1 projection is followed by layer norm.
    """

    def __init__(self, cfg: DecoderConfig, pyramid_channels: dict[int, int], gate_kind: str = "sigmoid"):
        missing = [l for l in LEVELS if l not in pyramid_channels]
        if missing:
            raise ValueError(f"decoder needs backbone levels L3..L5, missing {missing}")
        self.cfg = cfg
        self.pyramid_channels = dict(pyramid_channels)
        self.gate_kind = gate_kind

    def init_params(self, rng: np.random.Generator, dtype=np.float32) -> BlockParams:
        cfg = self.cfg
        p = BlockParams()
        for i, level in enumerate(LEVELS):
            d = cfg.D[i]
            p.nest(f"l{level}.lateral.conv", init_conv(rng, self.pyramid_channels[level], d, 1, dtype=dtype))
            p.nest(f"l{level}.lateral.norm", init_norm(d, dtype))
            if level != 5:
                p.nest(f"l{level}.top.conv", init_conv(rng, cfg.D[i - 1], d, 1, dtype=dtype))
                p.nest(f"l{level}.top.norm", init_norm(d, dtype))
            for b in range(cfg.N[i]):
                p.nest(f"l{level}.blocks.{b}",
                       init_convnext_block(rng, d, use_se=cfg.use_se, reduction=cfg.se_reduction, dtype=dtype))
        return p

    def forward(self, pyramid: FeaturePyramid, params: BlockParams) -> FeaturePyramid:
        if not isinstance(pyramid, FeaturePyramid):
            pyramid = FeaturePyramid(pyramid)
        pyramid.require(*LEVELS)
        out = {}
        prev = None
        for i, level in enumerate(LEVELS):
            lp = params.scope(f"l{level}")
            x = norm(conv(pyramid[level], lp.scope("lateral.conv")), lp.scope("lateral.norm"))
            if prev is not None:
                h, w = x.shape[2:]
                top = norm(conv(prev, lp.scope("top.conv")), lp.scope("top.norm"))
                x = ops.add(x, ops.bilinear_resize(top, h, w))
            for b in range(self.cfg.N[i]):
                x = convnext_se_block(x, lp.scope(f"blocks.{b}"), self.gate_kind)
            out[level] = x
            prev = x
        return FeaturePyramid(out)

    def describe(self, level_shapes: dict[int, tuple]) -> dict[int, Sequential]:
        """Cost description per level; the L4/L3 entries include the top-down branch."""
        cfg = self.cfg
        descs = {}
        for i, level in enumerate(LEVELS):
            d = cfg.D[i]
            n, _, h, w = level_shapes[level]
            lateral = Sequential((Conv2d(self.pyramid_channels[level], d, 1), Norm(d)))
            blocks = tuple(describe_convnext_block(d, cfg.use_se, cfg.se_reduction) for _ in range(cfg.N[i]))
            descs[level] = (lateral, blocks, None if level == 5 else
                            Sequential((Conv2d(cfg.D[i - 1], d, 1), Norm(d), Resize(h, w))))
        return descs

    def cost(self, level_shapes: dict[int, tuple]):
        """CostReport of the whole decoder given backbone level shapes."""
        total = None
        prev_shape = None
        for i, (level, (lateral, blocks, top)) in enumerate(self.describe(level_shapes).items()):
            c = cost_of(lateral, level_shapes[level])
            n, _, h, w = level_shapes[level]
            shape = (n, self.cfg.D[i], h, w)
            if top is not None:
                c = c + cost_of(top, prev_shape) + CostReport(0, int(np.prod(shape)))
            c = c + cost_of(Sequential(blocks), shape)
            total = c if total is None else total + c
            prev_shape = shape
        return total


def build_decoder(cfg: DecoderConfig, pyramid_channels: dict[int, int], gate_kind: str = "sigmoid") -> ConvNeXtUNet:
    return ConvNeXtUNet(cfg, pyramid_channels, gate_kind)
