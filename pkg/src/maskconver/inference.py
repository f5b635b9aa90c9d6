"""Heatmap NMS, top-K center selection, mask synthesis and panoptic merging."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import BlockParams
from .embedding import generate_mask_embeddings, lookup_class_embeddings, masks_from_embeddings
from .heads import HeadOutputs
from .labels import Categories, PanopticPrediction
from .numerics import Tensor, ops

SCORE_THRESHOLD = 0.2
OVERLAP_THRESHOLD = 0.75
TOP_K = 100
MASK_THRESHOLD = 0.5


@dataclass(frozen=True, order=True)
class CenterPoint:
    level: int
    row: int
    col: int
    class_id: int
    score: float = 0.0


@dataclass
class Segment:
    class_id: int
    score: float
    soft_mask: np.ndarray  # h x w in [0, 1]
    isthing: bool


def nms_heatmap(heatmap) -> np.ndarray:
    """Zero every cell that is below its 3x3 neighbourhood max (plateaus survive)."""
    hm = np.asarray(heatmap.data if isinstance(heatmap, Tensor) else heatmap)
    squeeze = hm.ndim == 3
    x = hm[None] if squeeze else hm
    pooled = ops.max_pool2d(x, 3, 1, 1).data
    out = np.where(pooled == x, x, 0.0).astype(x.dtype)
    return out[0] if squeeze else out


def select_centers(suppressed: dict[int, np.ndarray], k: int = TOP_K,
                   score_threshold: float = SCORE_THRESHOLD) -> list[CenterPoint]:
    """Pool nonzero cells over levels and classes, keep the top ``k`` above threshold.

    ``suppressed`` maps level -> C x H x W post-NMS scores for one image.
    """
    entries = []
    for level, hm in suppressed.items():
        cls, ys, xs = np.nonzero(hm)
        for c, y, x in zip(cls.tolist(), ys.tolist(), xs.tolist()):
            entries.append((float(hm[c, y, x]), (level, y, x, c)))
    picked = ops.top_k(entries, k)
    return [CenterPoint(lv, y, x, c, s) for s, (lv, y, x, c) in picked if s >= score_threshold]


def predict_masks(outputs: HeadOutputs, centers: list[CenterPoint], generator: BlockParams,
                  categories: Categories | None = None, batch_index: int = 0,
                  use_class_embeddings: bool = True) -> list[Segment]:
    """One soft mask per center, at mask-feature resolution."""
    if not centers:
        return []
    by_level: dict[int, list[int]] = {}
    for i, c in enumerate(centers):
        by_level.setdefault(c.level, []).append(i)
    e_dim = outputs.mask_features.shape[1]
    center_embs = np.zeros((len(centers), e_dim), dtype=outputs.mask_features.dtype)
    for level, idx in by_level.items():
        locs = [(batch_index, centers[i].row, centers[i].col) for i in idx]
        center_embs[idx] = ops.gather_at(outputs.center_embeddings[level], locs).data
    class_embs = None
    if use_class_embeddings:
        class_embs = lookup_class_embeddings(generator["class_table"], [c.class_id for c in centers])
    emb = generate_mask_embeddings(center_embs, class_embs, generator.scope("mlp"))
    logits = masks_from_embeddings(outputs.mask_features, emb, [batch_index] * len(centers))
    soft = ops.sigmoid(logits).data
    return [Segment(c.class_id, c.score, soft[i],
                    categories.isthing(c.class_id) if categories is not None else True)
            for i, c in enumerate(centers)]


def _upsample(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    if mask.shape == (out_h, out_w):
        return mask
    return ops.bilinear_resize(mask[None, None].astype(np.float64), out_h, out_w).data[0, 0]


def panoptic_merge(segments: list[Segment], out_h: int, out_w: int,
                   overlap_threshold: float = OVERLAP_THRESHOLD) -> PanopticPrediction:
    """Resolve overlapping soft masks into a panoptic map.

    Each pixel goes to the segment maximising ``score * soft_mask`` if that
    segment's mask is >= 0.5 there. Segments keeping less than
    ``overlap_threshold`` of their own >= 0.5 area are dropped (their pixels
    become void). Surviving stuff segments of one class are merged.
    """
    seg_map = np.zeros((out_h, out_w), dtype=np.uint16)
    if not segments:
        return PanopticPrediction(seg_map, [])
    masks = np.stack([_upsample(s.soft_mask, out_h, out_w) for s in segments])
    scores = np.array([s.score for s in segments], dtype=np.float64)
    winner = np.argmax(scores[:, None, None] * masks, axis=0)
    claims = np.take_along_axis(masks, winner[None], axis=0)[0] >= MASK_THRESHOLD

    records = []
    stuff_ids: dict[int, int] = {}
    for k, seg in enumerate(segments):
        original = masks[k] >= MASK_THRESHOLD
        original_area = int(original.sum())
        kept = claims & (winner == k)
        kept_area = int(kept.sum())
        if original_area == 0 or kept_area == 0 or kept_area / original_area < overlap_threshold:
            continue
        if not seg.isthing and seg.class_id in stuff_ids:
            sid = stuff_ids[seg.class_id]
            rec = records[sid - 1]
            rec["score"] = max(rec["score"], float(seg.score))
        else:
            sid = len(records) + 1
            records.append({"id": sid, "class_id": int(seg.class_id), "isthing": bool(seg.isthing),
                            "score": float(seg.score)})
            if not seg.isthing:
                stuff_ids[seg.class_id] = sid
        seg_map[kept] = sid
    return PanopticPrediction(seg_map, records)


def decode_image(outputs: HeadOutputs, generator: BlockParams, categories: Categories, image_hw,
                 batch_index: int = 0, k: int = TOP_K, score_threshold: float = SCORE_THRESHOLD,
                 overlap_threshold: float = OVERLAP_THRESHOLD,
                 use_class_embeddings: bool = True) -> PanopticPrediction:
    """Full post-processing for one image of a batched forward pass."""
    suppressed = {
        level: nms_heatmap(ops.sigmoid(logits.data[batch_index]).data)
        for level, logits in outputs.heatmap_logits.items()
    }
    centers = select_centers(suppressed, k, score_threshold)
    segments = predict_masks(outputs, centers, generator, categories, batch_index, use_class_embeddings)
    return panoptic_merge(segments, image_hw[0], image_hw[1], overlap_threshold)
