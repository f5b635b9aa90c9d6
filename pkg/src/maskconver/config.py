"""Model and training configuration, JSON round-trippable."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .blocks import HEAD_DEPTH, SE_REDUCTION
from .decoder import DecoderConfig

MULTI_SCALE = (3, 4, 5, 6, 7)
SINGLE_SCALE = (3,)


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    backbone: str = "tiny"
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    num_classes: int = 4
    embed_dim: int = 16
    top_k: int = 100
    score_threshold: float = 0.2
    overlap_threshold: float = 0.75
    head_levels: tuple[int, ...] = MULTI_SCALE
    head_kind: str = "depthwise"
    head_depth: int = HEAD_DEPTH
    center_mode: str = "mask"
    use_class_embeddings: bool = True
    gate_kind: str = "sigmoid"
    se_reduction: int = SE_REDUCTION
    in_channels: int = 3

    def __post_init__(self):
        if isinstance(self.decoder, dict):
            self.decoder = DecoderConfig.from_dict(self.decoder, self.se_reduction)
        self.head_levels = tuple(int(l) for l in self.head_levels)
        self.validate()

    def validate(self) -> None:
        if self.backbone not in ("tiny", "resnet50"):
            raise ConfigError(f"unknown backbone {self.backbone!r}")
        for name in ("score_threshold", "overlap_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.top_k < 1:
            raise ConfigError("top_k must be >= 1")
        lv = list(self.head_levels)
        if not lv or lv[0] != 3 or lv != list(range(3, 3 + len(lv))) or lv[-1] > 7:
            raise ConfigError(f"head levels must be contiguous from L3 up to at most L7, got {lv}")
        if self.center_mode not in ("mask", "box"):
            raise ConfigError(f"center_mode must be 'mask' or 'box', got {self.center_mode!r}")
        if self.head_kind not in ("depthwise", "dense"):
            raise ConfigError(f"head_kind must be 'depthwise' or 'dense', got {self.head_kind!r}")
        if self.gate_kind not in ("sigmoid", "hard_sigmoid"):
            raise ConfigError(f"gate_kind must be 'sigmoid' or 'hard_sigmoid', got {self.gate_kind!r}")
        if self.num_classes < 1 or self.embed_dim < 1:
            raise ConfigError("num_classes and embed_dim must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["decoder"] = self.decoder.to_dict()
        d["head_levels"] = list(self.head_levels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def coco_resnet50(cls, num_classes: int = 133) -> "ModelConfig":
        """The COCO ResNet50 setting, for cost accounting."""
        return cls(backbone="resnet50", decoder=DecoderConfig([18, 1, 1], [384, 384, 384], True),
                   num_classes=num_classes, embed_dim=256)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 0.05
    ema_decay: float = 0.99996
    steps: int = 2000
    batch_size: int = 4
    lambda_centers: float = 1.0
    lambda_bce: float = 10.0
    lambda_dice: float = 10.0
    center_mode: str = "mask"
    use_class_embeddings: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("steps must be >= 0 and batch_size >= 1")
        if self.center_mode not in ("mask", "box"):
            raise ConfigError(f"center_mode must be 'mask' or 'box', got {self.center_mode!r}")

    @property
    def loss_weights(self) -> tuple[float, float, float]:
        return (self.lambda_centers, self.lambda_bce, self.lambda_dice)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


def load_config(path) -> tuple[ModelConfig, TrainConfig]:
    """Read a config JSON: ``{"model": {...}, "train": {...}}``; both optional.

    Top-level training keys (lr, steps, ...) are also accepted.
    """
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    model_d = dict(doc.get("model", {}))
    train_keys = {f.name for f in fields(TrainConfig)}
    train_d = {k: v for k, v in doc.items() if k in train_keys}
    train_d.update(doc.get("train", {}))
    extra = set(doc) - train_keys - {"model", "train"}
    if extra:
        raise ConfigError(f"unknown config keys: {sorted(extra)}")
    train = TrainConfig.from_dict(train_d)
    model_d.setdefault("center_mode", train.center_mode)
    model_d.setdefault("use_class_embeddings", train.use_class_embeddings)
    return ModelConfig.from_dict(model_d), train
