"""scikit-learn style wrapper: ``fit`` on (images, labels), ``predict`` panoptic maps, ``score`` = PQ."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .config import ModelConfig, TrainConfig
from .decoder import DecoderConfig
from .inference import decode_image
from .labels import Categories, PanopticLabel, PanopticPrediction
from .metrics import evaluate
from .model import MaskConverModel
from .training.loop import Trainer


def check_images(X) -> np.ndarray:
    """Return a float32 N x 3 x H x W batch with values in [0, 1]."""
    X = np.asarray(X, dtype=np.float32)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4:
        raise ValueError(f"expected images shaped N x C x H x W, got {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("no images given")
    if X.shape[2] % 4 or X.shape[3] % 4:
        raise ValueError(f"image height and width must be divisible by 4, got {X.shape[2:]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("images contain non-finite values")
    if X.min() < 0.0 or X.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return X


def check_labels(y, X: np.ndarray) -> list[PanopticLabel]:
    y = list(y)
    if len(y) != len(X):
        raise ValueError(f"{len(X)} images but {len(y)} labels")
    cats = None
    for i, lab in enumerate(y):
        if not isinstance(lab, PanopticLabel):
            raise TypeError(f"label {i} is {type(lab).__name__}, expected PanopticLabel")
        if lab.shape != tuple(X.shape[2:]):
            raise ValueError(f"label {i} has shape {lab.shape}, image has {X.shape[2:]}")
        if cats is None:
            cats = lab.categories
        elif tuple(lab.categories) != tuple(cats):
            raise ValueError(f"label {i} uses a different category table")
    return y


def predict_panoptic(model: MaskConverModel, params, images, categories: Categories,
                     batch_size: int = 4) -> list[PanopticPrediction]:
    """Forward in chunks and decode every image."""
    cfg = model.config
    hw = images.shape[2:]
    gen = params.scope("generator")
    preds = []
    for start in range(0, len(images), batch_size):
        out = model.forward(images[start:start + batch_size], params)
        for b in range(out.mask_features.shape[0]):
            preds.append(decode_image(out, gen, categories, hw, b, cfg.top_k, cfg.score_threshold,
                                      cfg.overlap_threshold, cfg.use_class_embeddings))
    return preds


class MaskConverSegmenter(BaseEstimator):
    """Panoptic segmenter trained from scratch on small synthetic scenes.

    ``fit(X, y)`` takes images N x 3 x H x W in [0, 1] and a list of
    :class:`PanopticLabel`; ``predict(X)`` returns :class:`PanopticPrediction`
    objects and ``score(X, y)`` the dataset-level PQ.
    """

    def __init__(self, backbone="tiny", decoder_repeats=(2, 1, 1), decoder_widths=(32, 32, 32),
                 embed_dim=16, head_levels=(3, 4, 5, 6, 7), center_mode="mask",
                 use_class_embeddings=True, steps=400, batch_size=4, lr=1e-3, weight_decay=0.05,
                 ema_decay=0.99996, use_ema=True, seed=0):
        self.backbone = backbone
        self.decoder_repeats = decoder_repeats
        self.decoder_widths = decoder_widths
        self.embed_dim = embed_dim
        self.head_levels = head_levels
        self.center_mode = center_mode
        self.use_class_embeddings = use_class_embeddings
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.ema_decay = ema_decay
        self.use_ema = use_ema
        self.seed = seed

    def _configs(self, num_classes: int):
        model_cfg = ModelConfig(
            backbone=self.backbone,
            decoder=DecoderConfig(list(self.decoder_repeats), list(self.decoder_widths)),
            num_classes=num_classes, embed_dim=self.embed_dim, head_levels=tuple(self.head_levels),
            center_mode=self.center_mode, use_class_embeddings=self.use_class_embeddings)
        train_cfg = TrainConfig(lr=self.lr, weight_decay=self.weight_decay, ema_decay=self.ema_decay,
                                steps=self.steps, batch_size=self.batch_size,
                                center_mode=self.center_mode,
                                use_class_embeddings=self.use_class_embeddings, seed=self.seed)
        return model_cfg, train_cfg

    def fit(self, X, y, log_path=None):
        X = check_images(X)
        y = check_labels(y, X)
        self.categories_ = y[0].categories
        model_cfg, train_cfg = self._configs(len(self.categories_))
        self.trainer_ = Trainer(model_cfg, train_cfg, self.categories_)
        self.loss_history_ = self.trainer_.fit(X, y, log_path=log_path)
        self.model_ = self.trainer_.model
        return self

    @property
    def params_(self):
        check_is_fitted(self, "trainer_")
        return self.trainer_.ema if self.use_ema else self.trainer_.params

    def predict(self, X) -> list[PanopticPrediction]:
        check_is_fitted(self, "trainer_")
        X = check_images(X)
        return predict_panoptic(self.model_, self.params_, X, self.categories_, self.batch_size)

    def score(self, X, y) -> float:
        X = check_images(X)
        y = check_labels(y, X)
        return evaluate(self.predict(X), y).pq

    def save(self, directory) -> None:
        check_is_fitted(self, "trainer_")
        self.trainer_.save(directory)
