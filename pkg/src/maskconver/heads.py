"""Center heatmap, center embedding and mask feature heads.

The heatmap and embedding heads each hold one parameter set shared by every
pyramid level they are attached to.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .blocks import BlockParams, init_conv, init_light_head, init_norm, light_head, conv, norm
from .numerics import Tensor, ops

# logit of a 0.1 prior
HEATMAP_BIAS_INIT = -2.19


@dataclass
class HeadOutputs:
    heatmap_logits: dict[int, Tensor]
    center_embeddings: dict[int, Tensor]
    mask_features: Tensor

    def __post_init__(self):
        if set(self.heatmap_logits) != set(self.center_embeddings):
            raise ValueError("heatmap and embedding levels must coincide")

    @property
    def levels(self) -> list[int]:
        return sorted(self.heatmap_logits)


def init_heads(rng, width: int, num_classes: int, embed_dim: int, mask_input_widths: dict[int, int],
               depth: int = 2, kind: str = "depthwise", dtype=np.float32) -> BlockParams:
    p = BlockParams()
    p.nest("heatmap", init_light_head(rng, width, num_classes, depth, kind, HEATMAP_BIAS_INIT, dtype))
    p.nest("embedding", init_light_head(rng, width, embed_dim, depth, kind, dtype=dtype))
    p.nest("mask", init_light_head(rng, width, embed_dim, depth, kind, dtype=dtype))
    for level, c in sorted(mask_input_widths.items()):
        if c != width:
            p.nest(f"mask_inputs.l{level}.conv", init_conv(rng, c, width, 1, dtype=dtype))
            p.nest(f"mask_inputs.l{level}.norm", init_norm(width, dtype))
    return p


def center_heatmap_forward(features: dict[int, Tensor], params: BlockParams) -> dict[int, Tensor]:
    """Per-level C_class logit maps (pre-sigmoid)."""
    return {level: light_head(x, params) for level, x in features.items()}


def center_embedding_forward(features: dict[int, Tensor], params: BlockParams) -> dict[int, Tensor]:
    return {level: light_head(x, params) for level, x in features.items()}


def mask_feature_forward(decoded: dict[int, Tensor], params: BlockParams, image_hw: tuple[int, int]) -> Tensor:
    """Resize P5, P4, P3 to stride 4, sum them, then run the mask head.

    ``params`` is the full head parameter set (uses ``mask`` and ``mask_inputs``).
    """
    h4, w4 = (math.ceil(s / 4) for s in image_hw)
    total = None
    for level in (5, 4, 3):
        x = decoded[level]
        key = f"mask_inputs.l{level}.conv.weight"
        if key in params:
            x = norm(conv(x, params.scope(f"mask_inputs.l{level}.conv")), params.scope(f"mask_inputs.l{level}.norm"))
        x = ops.bilinear_resize(x, h4, w4)
        total = x if total is None else ops.add(total, x)
    return light_head(total, params.scope("mask"))
