"""Deterministic synthetic panoptic scenes and their on-disk layout.

Scenes have horizontal stuff bands (one stuff class each) with thing shapes
painted over them back to front. Dataset directories look like::

    categories.json
    scenes/0.img.mct   # float32 3 x H x W in [0, 1]
    scenes/0.cls.mct   # uint16 H x W class ids
    scenes/0.inst.mct  # uint16 H x W instance ids
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import tensor_io
from .labels import Categories, PanopticLabel

SHAPES = ("disk", "rectangle", "triangle", "ring")


@dataclass
class SceneConfig:
    height: int = 128
    width: int = 128
    n_things: tuple[int, int] = (1, 4)
    shapes: tuple[str, ...] = SHAPES
    thing_classes: int = 2
    stuff_classes: int = 2
    seed: int = 0
    # thing radius as a fraction of min(height, width)
    size_range: tuple[float, float] = (0.15, 0.3)
    # a new thing may hide at most this fraction of any earlier one
    max_overlap: float = 0.25
    noise: float = 0.02

    def __post_init__(self):
        if self.height % 4 or self.width % 4:
            raise ValueError(f"scene size {self.height}x{self.width} must be divisible by 4")
        if self.thing_classes < 1 or self.stuff_classes < 1:
            raise ValueError("need at least one thing class and one stuff class")
        bad = set(self.shapes) - set(SHAPES)
        if bad:
            raise ValueError(f"unknown shapes {sorted(bad)}")
        lo, hi = self.n_things
        if lo < 0 or hi < lo:
            raise ValueError(f"bad n_things range {self.n_things}")

    @property
    def categories(self) -> Categories:
        return Categories.synthetic(self.stuff_classes, self.thing_classes)


def class_color(class_id: int, num_classes: int) -> np.ndarray:
    """Fixed, well-separated RGB color for a class."""
    hue = (class_id * 0.618034) % 1.0
    value = 0.9 if class_id % 2 == 0 else 0.6
    return np.array(colorsys.hsv_to_rgb(hue, 0.75, value))


def shape_mask(kind: str, h: int, w: int, cy: float, cx: float, r: float, rng) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    dy, dx = yy - cy, xx - cx
    if kind == "disk":
        return dy * dy + dx * dx <= r * r
    if kind == "ring":
        d2 = dy * dy + dx * dx
        return (d2 <= r * r) & (d2 >= (0.55 * r) ** 2)
    if kind == "rectangle":
        a, b = rng.uniform(0.5, 1.0, size=2) * r
        return (np.abs(dy) <= a) & (np.abs(dx) <= b)
    if kind == "triangle":
        theta = rng.uniform(0, 2 * np.pi)
        angles = theta + np.array([0.0, 2 * np.pi / 3, 4 * np.pi / 3])
        vy, vx = cy + r * np.sin(angles), cx + r * np.cos(angles)
        inside = np.ones((h, w), dtype=bool)
        for i in range(3):
            j = (i + 1) % 3
            cross = (vx[j] - vx[i]) * (yy - vy[i]) - (vy[j] - vy[i]) * (xx - vx[i])
            inside &= cross >= 0
        return inside
    raise ValueError(f"unknown shape {kind!r}")


def _stuff_background(cfg: SceneConfig, rng) -> np.ndarray:
    h = cfg.height
    order = rng.permutation(cfg.stuff_classes)
    n = len(order)
    min_band = max(1, h // (2 * n))
    slack = h - min_band * n
    cuts = np.sort(rng.integers(0, slack + 1, size=n - 1)) if n > 1 else np.array([], dtype=int)
    edges = np.concatenate([[0], cuts + min_band * np.arange(1, n), [h]])
    cls = np.zeros((h, cfg.width), dtype=np.uint16)
    for k, c in enumerate(order):
        cls[edges[k]:edges[k + 1]] = c
    return cls


def _render(cfg: SceneConfig, class_map: np.ndarray, instance_map: np.ndarray,
            jitter: dict[int, np.ndarray], rng) -> np.ndarray:
    n_cls = cfg.stuff_classes + cfg.thing_classes
    palette = np.stack([class_color(c, n_cls) for c in range(n_cls)])
    img = palette[class_map].astype(np.float64)
    for inst, j in jitter.items():
        img[instance_map == inst] += j
    img += rng.normal(0.0, cfg.noise, size=img.shape)
    return np.clip(img, 0.0, 1.0).transpose(2, 0, 1).astype(np.float32)


def _finish(cfg, class_map, painted, things, rng):
    """Build the label from the paint buffer, dropping fully hidden things."""
    inst_map = np.zeros_like(class_map)
    jitter = {}
    next_id = 1
    for idx, (cls, jit) in enumerate(things):
        vis = painted == idx + 1
        if not vis.any():
            continue
        class_map[vis] = cls
        inst_map[vis] = next_id
        jitter[next_id] = jit
        next_id += 1
    image = _render(cfg, class_map, inst_map, jitter, rng)
    return image, PanopticLabel(class_map, inst_map, cfg.categories)


def generate_scene(cfg: SceneConfig) -> tuple[np.ndarray, PanopticLabel]:
    """Image (3 x H x W float32 in [0, 1]) and its panoptic label; pure in ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    h, w = cfg.height, cfg.width
    class_map = _stuff_background(cfg, rng)
    painted = np.zeros((h, w), dtype=np.int32)
    n = int(rng.integers(cfg.n_things[0], cfg.n_things[1] + 1))
    things = []
    side = min(h, w)
    for _ in range(n):
        for _attempt in range(30):
            r = rng.uniform(*cfg.size_range) * side
            cy = rng.uniform(r, h - 1 - r)
            cx = rng.uniform(r, w - 1 - r)
            kind = cfg.shapes[int(rng.integers(len(cfg.shapes)))]
            mask = shape_mask(kind, h, w, cy, cx, r, rng)
            if mask.sum() < 16:
                continue
            hidden_ok = all(
                (painted[mask] == k + 1).sum() <= cfg.max_overlap * (painted == k + 1).sum()
                for k in range(len(things)))
            if hidden_ok:
                break
        else:
            continue
        cls = cfg.stuff_classes + int(rng.integers(cfg.thing_classes))
        things.append((cls, rng.uniform(-0.06, 0.06, size=3)))
        painted[mask] = len(things)
    return _finish(cfg, class_map, painted, things, rng)


def generate_collision_scene(cfg: SceneConfig) -> tuple[np.ndarray, PanopticLabel]:
    """A disk inside a concentric ring of another class: both centroids coincide."""
    if cfg.thing_classes < 2:
        raise ValueError("collision scenes need at least 2 thing classes")
    rng = np.random.default_rng(cfg.seed)
    h, w = cfg.height, cfg.width
    class_map = _stuff_background(cfg, rng)
    a, b = rng.choice(cfg.thing_classes, size=2, replace=False) + cfg.stuff_classes
    r_disk = int(rng.integers(8, 13))
    r_in = r_disk + int(rng.integers(3, 6))
    r_out = r_in + int(rng.integers(8, 13))
    cy = int(rng.integers(r_out + 1, h - r_out - 1))
    cx = int(rng.integers(r_out + 1, w - r_out - 1))
    yy, xx = np.mgrid[0:h, 0:w]
    d2 = (yy - cy) ** 2 + (xx - cx) ** 2
    painted = np.zeros((h, w), dtype=np.int32)
    painted[(d2 >= r_in * r_in) & (d2 <= r_out * r_out)] = 1
    painted[d2 <= r_disk * r_disk] = 2
    things = [(int(b), rng.uniform(-0.06, 0.06, size=3)), (int(a), rng.uniform(-0.06, 0.06, size=3))]
    return _finish(cfg, class_map, painted, things, rng)


def is_collision_label(label: PanopticLabel, stride: int = 8) -> bool:
    """True when two thing segments of different classes share a mask-centroid cell."""
    cells = {}
    for cls, inst, mask in label.segments():
        if inst == 0:
            continue
        ys, xs = np.nonzero(mask)
        cell = (int(np.floor((ys.mean() + 0.5) / stride)), int(np.floor((xs.mean() + 0.5) / stride)))
        cells.setdefault(cell, set()).add(cls)
    return any(len(c) >= 2 for c in cells.values())


# -- dataset files ---------------------------------------------------------------

def save_scene(directory, index: int, image: np.ndarray, label: PanopticLabel) -> None:
    d = Path(directory) / "scenes"
    d.mkdir(parents=True, exist_ok=True)
    tensor_io.save(d / f"{index}.img.mct", np.asarray(image, dtype=np.float32))
    tensor_io.save(d / f"{index}.cls.mct", label.class_map)
    tensor_io.save(d / f"{index}.inst.mct", label.instance_map)


def load_scene(directory, index: int, categories: Categories) -> tuple[np.ndarray, PanopticLabel]:
    d = Path(directory) / "scenes"
    image = tensor_io.load(d / f"{index}.img.mct")
    cls = tensor_io.load(d / f"{index}.cls.mct")
    inst = tensor_io.load(d / f"{index}.inst.mct")
    if image.ndim != 3 or image.shape[1:] != cls.shape or cls.shape != inst.shape:
        raise tensor_io.TensorFormatError(
            f"scene {index}: image {image.shape}, class {cls.shape}, instance {inst.shape} disagree")
    return image, PanopticLabel(cls, inst, categories)


def save_dataset(directory, scenes, categories: Categories) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    categories.save(d / "categories.json")
    for i, (image, label) in enumerate(scenes):
        save_scene(d, i, image, label)


def scene_indices(directory) -> list[int]:
    d = Path(directory) / "scenes"
    if not d.is_dir():
        return []
    return sorted(int(p.name.split(".")[0]) for p in d.glob("*.img.mct"))


def load_dataset(directory) -> tuple[list[np.ndarray], list[PanopticLabel], Categories]:
    d = Path(directory)
    cats_path = d / "categories.json"
    if not cats_path.exists():
        raise FileNotFoundError(f"{cats_path} not found; not a dataset directory")
    categories = Categories.load(cats_path)
    images, labels = [], []
    for i in scene_indices(d):
        image, label = load_scene(d, i, categories)
        images.append(image)
        labels.append(label)
    return images, labels, categories


def generate_dataset(count: int, cfg: SceneConfig, collisions: int = 0):
    """``count`` plain scenes then ``collisions`` collision scenes; per-scene seed = seed + index."""
    scenes = [generate_scene(replace(cfg, seed=cfg.seed + i)) for i in range(count)]
    scenes += [generate_collision_scene(replace(cfg, seed=cfg.seed + count + i)) for i in range(collisions)]
    return scenes
