"""Panoptic ground truth and prediction containers."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Category:
    id: int
    name: str
    isthing: bool


class Categories(tuple):
    """Category table indexed by class id (ids are 0..C-1)."""

    def __new__(cls, items=()):
        items = tuple(items)
        for i, c in enumerate(items):
            if c.id != i:
                raise ValueError(f"category ids must be 0..C-1 in order; position {i} has id {c.id}")
        return super().__new__(cls, items)

    @classmethod
    def synthetic(cls, n_stuff: int, n_things: int) -> "Categories":
        cats = [Category(i, f"stuff_{i}", False) for i in range(n_stuff)]
        cats += [Category(n_stuff + i, f"thing_{i}", True) for i in range(n_things)]
        return cls(cats)

    @property
    def thing_ids(self) -> list[int]:
        return [c.id for c in self if c.isthing]

    @property
    def stuff_ids(self) -> list[int]:
        return [c.id for c in self if not c.isthing]

    def isthing(self, class_id: int) -> bool:
        return self[class_id].isthing

    def to_json(self) -> list[dict]:
        return [{"id": c.id, "name": c.name, "isthing": c.isthing} for c in self]

    @classmethod
    def from_json(cls, doc) -> "Categories":
        return cls(Category(int(d["id"]), str(d["name"]), bool(d["isthing"])) for d in doc)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path) -> "Categories":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass
class PanopticLabel:
    """Per-pixel class ids and instance ids.

    Thing pixels carry instance ids >= 1; all pixels of one stuff class share
    instance id 0, so a stuff class forms a single (possibly disconnected)
    segment.
    """

    class_map: np.ndarray
    instance_map: np.ndarray
    categories: Categories

    def __post_init__(self):
        self.class_map = np.asarray(self.class_map, dtype=np.uint16)
        self.instance_map = np.asarray(self.instance_map, dtype=np.uint16)
        if self.class_map.shape != self.instance_map.shape or self.class_map.ndim != 2:
            raise ValueError("class_map and instance_map must be equal-shaped 2-D planes")

    @property
    def shape(self) -> tuple[int, int]:
        return self.class_map.shape

    def validate(self) -> None:
        n = len(self.categories)
        if self.class_map.size and int(self.class_map.max()) >= n:
            raise ValueError(f"class id {int(self.class_map.max())} outside category table of size {n}")
        thing = np.array([c.isthing for c in self.categories])[self.class_map]
        if np.any(self.instance_map[thing] == 0):
            raise ValueError("thing pixels must carry instance ids >= 1")
        if np.any(self.instance_map[~thing] != 0):
            raise ValueError("stuff pixels must carry instance id 0")

    def segments(self) -> list[tuple[int, int, np.ndarray]]:
        """``(class_id, instance_id, mask)`` per segment, sorted by (class, instance)."""
        key = self.class_map.astype(np.int64) * 65536 + self.instance_map
        out = []
        for k in np.unique(key):
            out.append((int(k // 65536), int(k % 65536), key == k))
        return out

    def segment_id_map(self) -> tuple[np.ndarray, list[dict]]:
        """Re-express the label as a segment id map (1..S) with a segment table."""
        seg_map = np.zeros(self.shape, dtype=np.uint16)
        info = []
        for sid, (cls, inst, mask) in enumerate(self.segments(), start=1):
            seg_map[mask] = sid
            info.append({"id": sid, "class_id": cls, "isthing": self.categories.isthing(cls), "score": 1.0})
        return seg_map, info


@dataclass
class PanopticPrediction:
    """Segment id map (0 = void) plus one record per segment id."""

    segment_id_map: np.ndarray
    segments: list[dict] = field(default_factory=list)

    def __post_init__(self):
        self.segment_id_map = np.asarray(self.segment_id_map, dtype=np.uint16)

    def validate(self) -> None:
        ids = [s["id"] for s in self.segments]
        if ids != list(range(1, len(ids) + 1)):
            raise ValueError(f"segment ids must be consecutive from 1, got {ids}")
        present = set(np.unique(self.segment_id_map).tolist()) - {0}
        if present != set(ids):
            raise ValueError(f"map ids {sorted(present)} do not match segment table {ids}")

    @classmethod
    def from_label(cls, label: PanopticLabel) -> "PanopticPrediction":
        seg_map, info = label.segment_id_map()
        return cls(seg_map, info)

    def save(self, prefix) -> None:
        from . import tensor_io
        prefix = str(prefix)
        tensor_io.save(prefix + ".seg.mct", self.segment_id_map)
        Path(prefix + ".segments.json").write_text(json.dumps(self.segments, indent=1))

    @classmethod
    def load(cls, prefix) -> "PanopticPrediction":
        from . import tensor_io
        prefix = str(prefix)
        return cls(tensor_io.load(prefix + ".seg.mct"), json.loads(Path(prefix + ".segments.json").read_text()))
