"""Center focal loss, mask BCE/Dice, and their weighted sum."""

from __future__ import annotations

import numpy as np

from ..numerics import Tensor, as_tensor, ops

FOCAL_ALPHA = 2
FOCAL_BETA = 4
PROB_EPS = 1e-6
LOSS_WEIGHTS = (1.0, 10.0, 10.0)


def focal_loss(pred_logits, targets, num_centers: int | None = None) -> Tensor:
    """Penalty-reduced focal loss over every level and cell.

    ``pred_logits`` and ``targets`` are matching sequences (or dicts keyed by
    level) of logit tensors and target heatmaps. The sum is divided by the
    number of ground-truth centers (cells equal to 1), at least 1.
    """
    if isinstance(pred_logits, dict):
        keys = sorted(pred_logits)
        pred_logits = [pred_logits[k] for k in keys]
        targets = [targets[k] for k in keys]
    total = None
    n_pos = 0
    for logits, y in zip(pred_logits, targets):
        logits = as_tensor(logits)
        y = np.asarray(y, dtype=logits.dtype)
        if y.shape != logits.shape:
            raise ValueError(f"focal_loss: target {y.shape} vs prediction {logits.shape}")
        pos = (y == 1.0).astype(logits.dtype)
        neg_w = (1.0 - pos) * (1.0 - y) ** FOCAL_BETA
        n_pos += int(pos.sum())
        p = ops.clip(ops.sigmoid(logits), PROB_EPS, 1.0 - PROB_EPS)
        q = ops.sub(1.0, p)
        pos_term = ops.mul(ops.mul(ops.power(q, FOCAL_ALPHA), ops.log(p)), pos)
        neg_term = ops.mul(ops.mul(ops.power(p, FOCAL_ALPHA), ops.log(q)), neg_w)
        level_loss = ops.neg(ops.sum(ops.add(pos_term, neg_term)))
        total = level_loss if total is None else ops.add(total, level_loss)
    if total is None:
        return Tensor(np.zeros(()))
    if num_centers is None:
        num_centers = n_pos
    return ops.div(total, float(max(num_centers, 1)))


def mask_losses(pred_logits, gt_masks) -> tuple[Tensor, Tensor]:
    """Mean per-mask BCE and Dice between K x h x w logits and binary targets."""
    pred_logits = as_tensor(pred_logits)
    g = np.asarray(gt_masks, dtype=pred_logits.dtype)
    if g.shape != pred_logits.shape:
        raise ValueError(f"mask_losses: target {g.shape} vs prediction {pred_logits.shape}")
    k = pred_logits.shape[0]
    if k < 1:
        raise ValueError("mask_losses: need at least one mask")
    pos = ops.log_sigmoid(pred_logits)
    neg = ops.log_sigmoid(ops.neg(pred_logits))
    bce = ops.neg(ops.mean(ops.add(ops.mul(pos, g), ops.mul(neg, 1.0 - g))))
    p = ops.sigmoid(pred_logits)
    inter = ops.sum(ops.mul(p, g), axis=(1, 2))
    denom = ops.add(ops.sum(p, axis=(1, 2)), g.sum(axis=(1, 2)) + 1.0)
    dice = ops.sub(1.0, ops.mean(ops.div(ops.add(ops.mul(inter, 2.0), 1.0), denom)))
    return bce, dice


def total_loss(centers, bce, dice, weights=LOSS_WEIGHTS):
    """Weighted sum; works on tensors or plain floats."""
    wc, wb, wd = weights
    if any(isinstance(v, Tensor) for v in (centers, bce, dice)):
        return ops.add(ops.add(ops.mul(centers, wc), ops.mul(bce, wb)), ops.mul(dice, wd))
    return wc * centers + wb * bce + wd * dice
