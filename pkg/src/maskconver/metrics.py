"""Panoptic quality (PQ = SQ * RQ) with thing/stuff splits."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .labels import Categories, PanopticLabel, PanopticPrediction


def iou(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"iou: shape mismatch {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


@dataclass
class ClassStats:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    iou_sum: float = 0.0

    def __add__(self, other: "ClassStats") -> "ClassStats":
        return ClassStats(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn,
                          self.iou_sum + other.iou_sum)

    @property
    def defined(self) -> bool:
        return self.tp + self.fp + self.fn > 0

    @property
    def pq(self) -> float:
        d = self.tp + 0.5 * self.fp + 0.5 * self.fn
        return self.iou_sum / d if d else 0.0

    @property
    def sq(self) -> float:
        return self.iou_sum / self.tp if self.tp else 0.0

    @property
    def rq(self) -> float:
        d = self.tp + 0.5 * self.fp + 0.5 * self.fn
        return self.tp / d if d else 0.0


@dataclass
class PQStats:
    categories: Categories
    per_class: dict[int, ClassStats] = field(default_factory=dict)

    def __post_init__(self):
        for c in self.categories:
            self.per_class.setdefault(c.id, ClassStats())

    def merge(self, other: "PQStats") -> "PQStats":
        if tuple(self.categories) != tuple(other.categories):
            raise ValueError("cannot merge PQ stats over different category tables")
        return PQStats(self.categories, {k: self.per_class[k] + other.per_class[k] for k in self.per_class})

    __add__ = merge

    def _mean(self, attr: str, ids) -> float:
        vals = [getattr(self.per_class[i], attr) for i in ids if self.per_class[i].defined]
        return float(np.mean(vals)) if vals else 0.0

    def summary(self) -> dict:
        ids = [c.id for c in self.categories]
        out = {
            "PQ": self._mean("pq", ids),
            "SQ": self._mean("sq", ids),
            "RQ": self._mean("rq", ids),
            "PQ_thing": self._mean("pq", self.categories.thing_ids),
            "PQ_stuff": self._mean("pq", self.categories.stuff_ids),
            "SQ_thing": self._mean("sq", self.categories.thing_ids),
            "SQ_stuff": self._mean("sq", self.categories.stuff_ids),
            "RQ_thing": self._mean("rq", self.categories.thing_ids),
            "RQ_stuff": self._mean("rq", self.categories.stuff_ids),
        }
        out["per_class"] = {
            c.name: {"id": c.id, "isthing": c.isthing, "tp": s.tp, "fp": s.fp, "fn": s.fn,
                     "iou_sum": s.iou_sum, "PQ": s.pq, "SQ": s.sq, "RQ": s.rq}
            for c in self.categories
            for s in [self.per_class[c.id]]
            if s.defined
        }
        return out

    @property
    def pq(self) -> float:
        return self._mean("pq", [c.id for c in self.categories])


def pq_accumulate(a: PQStats, b: PQStats) -> PQStats:
    return a.merge(b)


def pq_stats(pred: PanopticPrediction, gt: PanopticLabel) -> PQStats:
    """Per-class TP/FP/FN/IoU for one frame; same-class matches need IoU > 0.5."""
    if pred.segment_id_map.shape != gt.shape:
        raise ValueError(f"frame size mismatch: prediction {pred.segment_id_map.shape} vs label {gt.shape}")
    cats = gt.categories
    stats = PQStats(cats)
    gt_segs = gt.segments()
    pred_segs = [(s["class_id"], pred.segment_id_map == s["id"]) for s in pred.segments]
    for cls, _, _ in gt_segs:
        if cls >= len(cats):
            raise ValueError(f"ground-truth class {cls} not in category table")
    for cls, _ in pred_segs:
        if cls >= len(cats):
            raise ValueError(f"predicted class {cls} not in category table")

    # IoU via one joint histogram over (gt segment, pred segment) pixel pairs
    gt_index = np.zeros(gt.shape, dtype=np.int64)
    for i, (_, _, m) in enumerate(gt_segs, start=1):
        gt_index[m] = i
    pred_index = pred.segment_id_map.astype(np.int64)
    n_g, n_p = len(gt_segs) + 1, len(pred_segs) + 1
    joint = np.bincount((gt_index * n_p + pred_index).ravel(), minlength=n_g * n_p).reshape(n_g, n_p)
    gt_area = joint.sum(axis=1)
    pred_area = joint.sum(axis=0)

    matched_gt, matched_pred = set(), set()
    for gi in range(1, n_g):
        g_cls = gt_segs[gi - 1][0]
        for pi in np.nonzero(joint[gi])[0]:
            if pi == 0 or pred_segs[pi - 1][0] != g_cls:
                continue
            inter = joint[gi, pi]
            value = inter / (gt_area[gi] + pred_area[pi] - inter)
            if value > 0.5:
                matched_gt.add(gi)
                matched_pred.add(pi)
                st = stats.per_class[g_cls]
                st.tp += 1
                st.iou_sum += float(value)
    for gi in range(1, n_g):
        if gi not in matched_gt:
            stats.per_class[gt_segs[gi - 1][0]].fn += 1
    for pi in range(1, n_p):
        if pi not in matched_pred:
            stats.per_class[pred_segs[pi - 1][0]].fp += 1
    return stats


def pq_compute(pred: PanopticPrediction, gt: PanopticLabel) -> dict:
    """PQ/SQ/RQ summary for one frame (see :func:`pq_stats`)."""
    return pq_stats(pred, gt).summary()


def evaluate(preds, labels) -> PQStats:
    preds, labels = list(preds), list(labels)
    if len(preds) != len(labels):
        raise ValueError(f"{len(preds)} predictions for {len(labels)} labels")
    if not labels:
        raise ValueError("nothing to evaluate")
    total = PQStats(labels[0].categories)
    for p, g in zip(preds, labels):
        total = total.merge(pq_stats(p, g))
    return total
