"""One optimisation step (forward, targets, losses, backward, AdamW, EMA) and a driver."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..blocks import BlockParams
from ..config import ModelConfig, TrainConfig
from ..embedding import generate_mask_embeddings, lookup_class_embeddings, masks_from_embeddings
from ..labels import Categories, PanopticLabel
from ..model import MaskConverModel
from ..numerics import GradTape, NonFiniteError, ops
from .losses import focal_loss, mask_losses, total_loss
from .optim import AdamWState, adamw_step, ema_update, ema_warmup_decay
from .targets import downsample_nearest, render_center_targets

log = logging.getLogger(__name__)


@dataclass
class LossBreakdown:
    step: int
    centers: float
    bce: float
    dice: float
    total: float
    weights: tuple[float, float, float]

    def as_dict(self) -> dict:
        return {"step": self.step, "L_centers": self.centers, "L_bce": self.bce, "L_dice": self.dice,
                "L_total": self.total, "lambda": list(self.weights)}


def build_targets(labels: list[PanopticLabel], levels, center_mode: str, mask_hw, dtype=np.float32):
    """Stacked heatmap targets per level, plus teacher-forcing center/mask lists."""
    per_image = [render_center_targets(l, center_mode, levels, dtype) for l in labels]
    heatmaps = {lv: np.stack([t.heatmaps[lv] for t in per_image]) for lv in levels}
    centers, masks = [], []
    for n, t in enumerate(per_image):
        for c in t.centers:
            if c.supervise_mask:
                centers.append((n, c))
                masks.append(downsample_nearest(t.masks[c.segment], *mask_hw))
    num_centers = sum(len(t.centers) for t in per_image)
    return heatmaps, centers, np.stack(masks).astype(dtype) if masks else None, num_centers


def compute_losses(model: MaskConverModel, params: BlockParams, images, labels, center_mode: str,
                   use_class_embeddings: bool, weights):
    out = model.forward(images, params)
    mask_hw = out.mask_features.shape[2:]
    heatmaps, centers, gt_masks, num_centers = build_targets(
        labels, model.levels, center_mode, mask_hw, out.mask_features.dtype)
    l_centers = focal_loss(out.heatmap_logits, heatmaps, num_centers)

    # gather in level order so each level needs a single gather
    order = sorted(range(len(centers)), key=lambda i: centers[i][1].level)
    pieces = []
    for level in sorted({c.level for _, c in centers}):
        idx = [i for i in order if centers[i][1].level == level]
        locs = [(centers[i][0], centers[i][1].row, centers[i][1].col) for i in idx]
        pieces.append(ops.gather_at(out.center_embeddings[level], locs))
    center_embs = ops.concat(pieces, axis=0)
    class_ids = [centers[i][1].class_id for i in order]
    gen = params.scope("generator")
    class_embs = lookup_class_embeddings(gen["class_table"], class_ids) if use_class_embeddings else None
    emb = generate_mask_embeddings(center_embs, class_embs, gen.scope("mlp"))
    logits = masks_from_embeddings(out.mask_features, emb, [centers[i][0] for i in order])
    bce, dice = mask_losses(logits, gt_masks[order])
    total = total_loss(l_centers, bce, dice, weights)
    return l_centers, bce, dice, total


def train_step(model: MaskConverModel, params: BlockParams, images, labels, opt_state: AdamWState,
               train_cfg: TrainConfig, ema: BlockParams | None = None) -> LossBreakdown:
    """Forward, backward and parameter update for one batch.

    Center mode and class-embedding use come from the model config so that
    training and inference always agree.
    """
    names = list(params)
    with GradTape() as tape:
        l_c, l_b, l_d, total = compute_losses(
            model, params, images, labels, model.config.center_mode,
            model.config.use_class_embeddings, train_cfg.loss_weights)
    values = [float(l_c.data), float(l_b.data), float(l_d.data), float(total.data)]
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"non-finite loss at step {opt_state.step + 1}: "
                             f"centers={values[0]} bce={values[1]} dice={values[2]}")
    grads = dict(zip(names, tape.gradient(total, [params[n] for n in names])))
    for n, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {n} at step {opt_state.step + 1}")
    adamw_step(params, grads, opt_state, lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    if ema is not None:
        ema_update(ema, params, ema_warmup_decay(train_cfg.ema_decay, opt_state.step))
    return LossBreakdown(opt_state.step, *values, weights=train_cfg.loss_weights)


class Trainer:
    """Holds model, parameters, optimizer state and EMA shadow for a training run."""

    def __init__(self, model_cfg: ModelConfig, train_cfg: TrainConfig, categories: Categories,
                 dtype=np.float32):
        if model_cfg.num_classes != len(categories):
            raise ValueError(f"model has {model_cfg.num_classes} classes, dataset has {len(categories)}")
        self.model_cfg = model_cfg
        self.train_cfg = train_cfg
        self.categories = categories
        self.model = MaskConverModel(model_cfg)
        self.params = self.model.init_params(train_cfg.seed, dtype)
        self.ema = self.params.copy_arrays()
        self.opt_state = AdamWState.zeros_like(self.params)
        self.history: list[LossBreakdown] = []

    def batches(self, n_items: int):
        rng = np.random.default_rng(self.train_cfg.seed + 1)
        bs = min(self.train_cfg.batch_size, n_items)
        while True:
            perm = rng.permutation(n_items)
            for i in range(0, n_items - bs + 1, bs):
                yield perm[i:i + bs]

    def fit(self, images, labels, steps: int | None = None, log_path=None, callback=None) -> list[LossBreakdown]:
        images = np.stack([np.asarray(im, dtype=np.float32) for im in images])
        steps = self.train_cfg.steps if steps is None else steps
        sink = open(log_path, "a") if log_path else None
        try:
            batches = self.batches(len(images))
            for _ in range(steps):
                idx = next(batches)
                rec = train_step(self.model, self.params, images[idx], [labels[i] for i in idx],
                                 self.opt_state, self.train_cfg, self.ema)
                self.history.append(rec)
                if sink:
                    sink.write(json.dumps(rec.as_dict()) + "\n")
                if rec.step % 50 == 0:
                    log.info("step %d total %.4f (centers %.4f bce %.4f dice %.4f)",
                             rec.step, rec.total, rec.centers, rec.bce, rec.dice)
                if callback is not None:
                    callback(rec)
        finally:
            if sink:
                sink.close()
        return self.history

    def save(self, directory) -> None:
        save_checkpoint(directory, self.model_cfg, self.categories, self.params, self.ema,
                        self.train_cfg)


def save_checkpoint(directory, model_cfg: ModelConfig, categories: Categories, params: BlockParams,
                    ema: BlockParams | None = None, train_cfg: TrainConfig | None = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {"model": model_cfg.to_dict(), "categories": categories.to_json()}
    if train_cfg is not None:
        meta["train"] = train_cfg.to_dict()
    (d / "config.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    params.save(d / "params")
    if ema is not None:
        ema.save(d / "ema")


def load_checkpoint(directory, use_ema: bool = True):
    """Return ``(ModelConfig, Categories, params)``; EMA weights when present and requested."""
    d = Path(directory)
    meta = json.loads((d / "config.json").read_text())
    cfg = ModelConfig.from_dict(meta["model"])
    cats = Categories.from_json(meta["categories"])
    sub = d / ("ema" if use_ema and (d / "ema").exists() else "params")
    return cfg, cats, BlockParams.load(sub)
