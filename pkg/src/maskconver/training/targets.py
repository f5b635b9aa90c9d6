"""Ground-truth center targets: centers, level assignment, Gaussian heatmaps."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..labels import PanopticLabel

# sqrt(area) upper bounds for L3..L6; anything larger goes to L7
LEVEL_THRESHOLDS = ((3, 64), (4, 128), (5, 256), (6, 512))
MIN_OVERLAP = 0.7


def mask_center(mask: np.ndarray) -> tuple[float, float]:
    """Centroid of the foreground pixels."""
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise ValueError("mask_center: empty mask")
    return float(ys.mean()), float(xs.mean())


def box_center(mask: np.ndarray) -> tuple[float, float]:
    """Center of the tight bounding box."""
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise ValueError("box_center: empty mask")
    return (ys.min() + ys.max()) / 2.0, (xs.min() + xs.max()) / 2.0


def assign_level(mask_area: int, available_levels=(3, 4, 5, 6, 7)) -> int:
    if mask_area < 1:
        raise ValueError("assign_level: area must be >= 1")
    s = math.sqrt(mask_area)
    level = 7
    for lv, bound in LEVEL_THRESHOLDS:
        if s < bound:
            level = lv
            break
    levels = sorted(available_levels)
    return min(max(level, levels[0]), levels[-1])


def gaussian_radius(height: float, width: float, min_overlap: float = MIN_OVERLAP) -> float:
    """CenterNet's radius keeping IoU >= min_overlap under corner jitter."""
    b1 = height + width
    c1 = width * height * (1 - min_overlap) / (1 + min_overlap)
    r1 = (b1 + math.sqrt(b1 ** 2 - 4 * c1)) / 2
    b2 = 2 * (height + width)
    c2 = (1 - min_overlap) * width * height
    r2 = (b2 + math.sqrt(b2 ** 2 - 16 * c2)) / 2
    a3 = 4 * min_overlap
    b3 = -2 * min_overlap * (height + width)
    c3 = (min_overlap - 1) * width * height
    r3 = (b3 + math.sqrt(b3 ** 2 - 4 * a3 * c3)) / 2
    return min(r1, r2, r3)


def gaussian_sigma(box_h: float, box_w: float) -> float:
    radius = int(gaussian_radius(box_h, box_w))
    return max(radius, 1) / 3.0


def snap(coord: float, stride: int, size: int) -> int:
    """Index of the level cell whose center is nearest to a pixel coordinate."""
    return int(min(max(math.floor((coord + 0.5) / stride), 0), size - 1))


@dataclass
class GTCenter:
    level: int
    row: int
    col: int
    class_id: int
    segment: int  # index into label.segments()
    area: int
    supervise_mask: bool = True


@dataclass
class CenterTargets:
    heatmaps: dict[int, np.ndarray]
    centers: list[GTCenter] = field(default_factory=list)
    masks: list[np.ndarray] = field(default_factory=list)  # full-resolution, one per segment


def render_center_targets(label: PanopticLabel, center_mode: str = "mask",
                          levels=(3, 4, 5, 6, 7), dtype=np.float32) -> CenterTargets:
    """One center per thing instance and per stuff class, splatted on its level's heatmap."""
    if center_mode not in ("mask", "box"):
        raise ValueError(f"center_mode must be 'mask' or 'box', got {center_mode!r}")
    h, w = label.shape
    n_cls = len(label.categories)
    levels = sorted(levels)
    sizes = {l: (math.ceil(h / 2 ** l), math.ceil(w / 2 ** l)) for l in levels}
    heatmaps = {l: np.zeros((n_cls,) + sizes[l], dtype=dtype) for l in levels}
    grids = {l: np.mgrid[0:sizes[l][0], 0:sizes[l][1]] for l in levels}
    centers, masks = [], []
    center_fn = mask_center if center_mode == "mask" else box_center
    for idx, (cls, _inst, mask) in enumerate(label.segments()):
        area = int(mask.sum())
        level = assign_level(area, levels)
        stride = 2 ** level
        lh, lw = sizes[level]
        cy, cx = center_fn(mask)
        row, col = snap(cy, stride, lh), snap(cx, stride, lw)
        ys, xs = np.nonzero(mask)
        sigma = gaussian_sigma((ys.max() - ys.min() + 1) / stride, (xs.max() - xs.min() + 1) / stride)
        gy, gx = grids[level]
        splat = np.exp(-((gy - row) ** 2 + (gx - col) ** 2) / (2 * sigma * sigma))
        np.maximum(heatmaps[level][cls], splat, out=heatmaps[level][cls])
        centers.append(GTCenter(level, row, col, cls, idx, area))
        masks.append(mask)
    # co-located same-class centers: only the largest segment keeps mask supervision
    best: dict[tuple, GTCenter] = {}
    for c in centers:
        key = (c.level, c.row, c.col, c.class_id)
        if key in best:
            loser = c if c.area <= best[key].area else best[key]
            loser.supervise_mask = False
            if loser is best[key]:
                best[key] = c
        else:
            best[key] = c
    return CenterTargets(heatmaps, centers, masks)


def downsample_nearest(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbour sampling at half-pixel-aligned output centers."""
    h, w = mask.shape
    ys = np.minimum(np.floor((np.arange(out_h) + 0.5) * h / out_h).astype(int), h - 1)
    xs = np.minimum(np.floor((np.arange(out_w) + 0.5) * w / out_w).astype(int), w - 1)
    return mask[np.ix_(ys, xs)]
