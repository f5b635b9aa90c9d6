"""Central finite-difference checks for tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autograd import GradTape, Tensor


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b|| / max(||a||, ||b||), 0 when both vanish."""
    num = float(np.linalg.norm(np.ravel(a) - np.ravel(b)))
    den = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)))
    if den < 1e-12:
        return num
    return num / den


def numeric_gradient(fn: Callable[[], Tensor], x: Tensor, step: float = 1e-5,
                     entries: np.ndarray | None = None) -> np.ndarray:
    """Central differences of ``fn().sum()`` w.r.t. ``x`` (only at flat ``entries`` if given)."""
    grad = np.zeros_like(x.data, dtype=np.float64)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in (range(flat.size) if entries is None else entries):
        orig = flat[i]
        flat[i] = orig + step
        up = float(fn().data.sum())
        flat[i] = orig - step
        down = float(fn().data.sum())
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return grad


def check_gradients(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray],
                    step: float = 1e-5, seed: int = 0, max_entries: int | None = None) -> float:
    """Max relative error between tape and finite-difference gradients.

    ``fn`` maps tensors to a tensor; it is reduced to a scalar by a fixed
    random cotangent so every output element contributes. With
    ``max_entries`` only that many randomly chosen coordinates of each
    input are differenced (for blocks with many parameters).
    """
    rng = np.random.default_rng(seed)
    tensors = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in inputs]
    probe = fn(*tensors)
    weights = rng.standard_normal(probe.shape)

    def scalar() -> Tensor:
        return (fn(*tensors) * weights).sum()

    with GradTape() as tape:
        loss = scalar()
    analytic = tape.gradient(loss, tensors)
    worst = 0.0
    for t, g in zip(tensors, analytic):
        entries = None
        if max_entries is not None and t.size > max_entries:
            entries = np.sort(rng.choice(t.size, max_entries, replace=False))
        numeric = numeric_gradient(scalar, t, step, entries)
        if entries is not None:
            g, numeric = g.reshape(-1)[entries], numeric.reshape(-1)[entries]
        worst = max(worst, relative_error(g, numeric))
    return worst
