"""AdamW with decoupled weight decay, and an exponential moving average of weights."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..numerics import Tensor


def _array(p) -> np.ndarray:
    # ndarray has a ``data`` attribute too (a buffer), so test for Tensor explicitly
    return p.data if isinstance(p, Tensor) else p


@dataclass
class AdamWState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params) -> "AdamWState":
        arrays = {k: _array(p) for k, p in params.items()}
        return cls(0, {k: np.zeros_like(a) for k, a in arrays.items()},
                   {k: np.zeros_like(a) for k, a in arrays.items()})


def adamw_step(params: dict, grads: dict[str, np.ndarray], state: AdamWState, lr: float = 1e-3,
               beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
               weight_decay: float = 0.05) -> AdamWState:
    """Update ``params`` in place (Tensor.data or raw arrays) and return the state.

    Decay is applied to the weights before the Adam update.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        a = _array(p)
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if weight_decay:
            a *= 1.0 - lr * weight_decay
        a -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


def ema_update(shadow: dict, params: dict, decay: float = 0.99996) -> dict:
    """``shadow = decay * shadow + (1 - decay) * params`` in place."""
    for name, s in shadow.items():
        sa = _array(s)
        pa = _array(params[name])
        if sa.shape != pa.shape:
            raise ValueError(f"ema_update: shape mismatch for {name}: {sa.shape} vs {pa.shape}")
        sa *= decay
        sa += (1.0 - decay) * pa
    return shadow


def ema_warmup_decay(decay: float, num_updates: int) -> float:
    """Decay capped by (1 + t) / (10 + t) so short runs still track the weights."""
    return min(decay, (1.0 + num_updates) / (10.0 + num_updates))
