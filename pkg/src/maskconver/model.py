"""The assembled network: backbone -> decoder -> heads, plus the generator params."""

from __future__ import annotations

import math

import numpy as np

from .backbone import (
    FeaturePyramid,
    backbone_cost,
    build_backbone,
    describe_extension,
    extend_pyramid,
    init_extension,
)
from .blocks import (
    BlockParams,
    Conv2d,
    CostReport,
    Norm,
    Resize,
    Sequential,
    conv,
    cost_of,
    describe_light_head,
    norm,
)
from .config import ModelConfig
from .decoder import ConvNeXtUNet
from .embedding import init_generator
from .heads import (
    HeadOutputs,
    center_embedding_forward,
    center_heatmap_forward,
    init_heads,
    mask_feature_forward,
)
from .blocks import init_conv, init_norm
from .numerics import Tensor, ops

INPUT_MEAN = 0.5
INPUT_STD = 0.5


class MaskConverModel:
    def __init__(self, config: ModelConfig):
        self.config = config
        kw = {}
        if config.backbone == "tiny":
            kw = {"gate_kind": config.gate_kind, "se_reduction": config.se_reduction}
        self.backbone = build_backbone(config.backbone, config.in_channels, **kw)
        self.decoder = ConvNeXtUNet(config.decoder, self.backbone.channels, config.gate_kind)
        self.head_width = config.decoder.width(3)

    @property
    def levels(self) -> tuple[int, ...]:
        return self.config.head_levels

    def _head_input_widths(self) -> dict[int, int]:
        return {l: self.config.decoder.width(l) for l in (3, 4, 5)}

    def init_params(self, seed: int = 0, dtype=np.float32) -> BlockParams:
        cfg = self.config
        rng = np.random.default_rng(seed)
        p = BlockParams()
        p.nest("backbone", self.backbone.init_params(rng, dtype))
        p.nest("decoder", self.decoder.init_params(rng, dtype))
        widths = self._head_input_widths()
        for level in (4, 5):
            if level in self.levels and widths[level] != self.head_width:
                p.nest(f"head_inputs.l{level}.conv", init_conv(rng, widths[level], self.head_width, 1, dtype=dtype))
                p.nest(f"head_inputs.l{level}.norm", init_norm(self.head_width, dtype))
        if 6 in self.levels:
            p.nest("extension", init_extension(rng, self.backbone.channels[5], self.head_width, dtype))
        p.nest("heads", init_heads(rng, self.head_width, cfg.num_classes, cfg.embed_dim, widths,
                                   cfg.head_depth, cfg.head_kind, dtype))
        p.nest("generator", init_generator(rng, cfg.num_classes, cfg.embed_dim, dtype))
        return p

    def normalize(self, images) -> Tensor:
        x = np.asarray(images.data if isinstance(images, Tensor) else images)
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ValueError(f"expected N x {self.config.in_channels} x H x W images, got shape {x.shape}")
        return Tensor((x - INPUT_MEAN) / INPUT_STD)

    def head_features(self, images, params: BlockParams):
        """Decoded pyramid (P3..P5) and the per-level features fed to the center heads."""
        x = self.normalize(images)
        if x.dtype != params["heads.heatmap.proj.weight"].dtype:
            x = Tensor(x.data.astype(params["heads.heatmap.proj.weight"].dtype))
        pyramid = self.backbone.forward(x, params.scope("backbone"))
        decoded = self.decoder.forward(pyramid, params.scope("decoder"))
        feats = {}
        for level in self.levels:
            if level <= 5:
                f = decoded[level]
                key = f"head_inputs.l{level}"
                if f"{key}.conv.weight" in params:
                    f = norm(conv(f, params.scope(f"{key}.conv")), params.scope(f"{key}.norm"))
                feats[level] = f
        if 6 in self.levels:
            l6, l7 = extend_pyramid(pyramid[5], params.scope("extension"))
            feats[6] = l6
            if 7 in self.levels:
                feats[7] = l7
        return decoded, feats

    def forward(self, images, params: BlockParams) -> HeadOutputs:
        images = np.asarray(images.data if isinstance(images, Tensor) else images)
        h, w = images.shape[-2:]
        decoded, feats = self.head_features(images, params)
        hp = params.scope("heads")
        return HeadOutputs(
            heatmap_logits=center_heatmap_forward(feats, hp.scope("heatmap")),
            center_embeddings=center_embedding_forward(feats, hp.scope("embedding")),
            mask_features=mask_feature_forward(decoded, hp, (h, w)),
        )

    # -- analytic cost -----------------------------------------------------------

    def cost(self, input_hw: tuple[int, int], batch: int = 1) -> dict[str, CostReport]:
        """Params/FLOPs per component by shape arithmetic; allocates no feature maps."""
        cfg = self.config
        h, w = input_hw
        shape = (batch, cfg.in_channels, h, w)
        bb, taps = backbone_cost(self.backbone, shape)
        dec = self.decoder.cost(taps)
        width = self.head_width
        level_shapes = {l: (batch, width, math.ceil(h / 2 ** l), math.ceil(w / 2 ** l)) for l in self.levels}

        extras = CostReport()
        widths = self._head_input_widths()
        for level in (4, 5):
            if level in self.levels and widths[level] != width:
                extras = extras + cost_of(Sequential((Conv2d(widths[level], width, 1), Norm(width))),
                                          (batch, widths[level]) + level_shapes[level][2:])
        if 6 in self.levels:
            ext = describe_extension(self.backbone.channels[5], width)
            extras = extras + cost_of(ext[6], taps[5])
            if 7 in self.levels:
                extras = extras + cost_of(ext[7], level_shapes[6])

        heads = CostReport()
        for out_c in (cfg.num_classes, cfg.embed_dim):
            desc = describe_light_head(width, out_c, cfg.head_depth, cfg.head_kind)
            per_level = [cost_of(desc, s) for s in level_shapes.values()]
            heads = heads + CostReport(per_level[0].params, sum(c.flops for c in per_level))
        h4, w4 = math.ceil(h / 4), math.ceil(w / 4)
        for level in (5, 4, 3):
            n, c, hl, wl = taps[level]
            d = widths[level]
            layers = (Conv2d(d, width, 1), Norm(width)) if d != width else ()
            heads = heads + cost_of(Sequential(layers + (Resize(h4, w4),)), (batch, d, hl, wl))
        heads = heads + CostReport(0, 2 * batch * width * h4 * w4)
        heads = heads + cost_of(describe_light_head(width, cfg.embed_dim, cfg.head_depth, cfg.head_kind),
                                (batch, width, h4, w4))

        e, k = cfg.embed_dim, cfg.top_k
        gen = CostReport(cfg.num_classes * e + 2 * (e * e + e),
                         batch * k * (2 * 2 * e * e + 5 * e + 2 * e * h4 * w4))
        report = {"backbone": bb, "decoder": dec, "pyramid_extension": extras, "heads": heads, "generator": gen}
        total = CostReport()
        for c in report.values():
            total = total + c
        report["total"] = total
        return report
