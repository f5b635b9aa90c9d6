"""Mask embedding generator: class embeddings, MLP, and mask synthesis."""

from __future__ import annotations

import numpy as np

from .blocks import BlockParams, init_linear
from .numerics import Tensor, as_tensor, ops

CLASS_TABLE_STD = 0.02


def init_generator(rng: np.random.Generator, num_classes: int, embed_dim: int,
                   dtype=np.float32) -> BlockParams:
    p = BlockParams(class_table=Tensor(
        (rng.standard_normal((num_classes, embed_dim)) * CLASS_TABLE_STD).astype(dtype), requires_grad=True))
    p.nest("mlp.fc1", init_linear(rng, embed_dim, embed_dim, dtype))
    p.nest("mlp.fc2", init_linear(rng, embed_dim, embed_dim, dtype))
    return p


def lookup_class_embeddings(table, class_ids) -> Tensor:
    """Rows of the class table, one per id (K x C_embd)."""
    return ops.take_rows(table, class_ids)


def generate_mask_embeddings(center_embs, class_embs, mlp: BlockParams) -> Tensor:
    """MLP(center + class); pass ``class_embs=None`` to skip the class term."""
    x = as_tensor(center_embs)
    if class_embs is not None:
        class_embs = as_tensor(class_embs)
        if class_embs.shape != x.shape:
            raise ValueError(f"center embeddings {x.shape} and class embeddings {class_embs.shape} differ")
        x = ops.add(x, class_embs)
    if x.shape[0] == 0:
        return Tensor(np.zeros((0, mlp["fc2.weight"].shape[0]), dtype=mlp["fc2.weight"].dtype))
    h = ops.gelu(ops.linear(x, mlp["fc1.weight"], mlp["fc1.bias"]))
    return ops.linear(h, mlp["fc2.weight"], mlp["fc2.bias"])


def masks_from_embeddings(mask_features, embeddings, batch_index) -> Tensor:
    """K x h x w mask logits: dot product of each embedding with its image's features."""
    return ops.masks_from_embeddings(mask_features, embeddings, batch_index)
