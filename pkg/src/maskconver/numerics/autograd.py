"""Tape-based reverse-mode differentiation over numpy arrays.

Operations in :mod:`maskconver.numerics.ops` create :class:`Tensor` outputs and,
while a :class:`GradTape` is active and at least one input requires a
gradient, append a record ``(output, inputs, vjp)`` to the tape.
``GradTape.gradient`` replays those records backwards.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

_ACTIVE_TAPES: list["GradTape"] = []
_DEBUG_FINITE = False


def set_debug(enabled: bool) -> None:
    """Toggle finite-value checking on every op output (slow)."""
    global _DEBUG_FINITE
    _DEBUG_FINITE = bool(enabled)


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    """Dense array plus a flag saying whether gradients should flow into it."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype.kind not in "fc":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __len__(self) -> int:
        return len(self.data)

    # arithmetic sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr)


VJP = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class GradTape:
    """Records differentiable operations executed inside its ``with`` block.

    One tape per training step; not safe to share between threads.
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], VJP]] = []

    def __enter__(self) -> "GradTape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def gradient(self, target: Tensor, sources: Iterable[Tensor]) -> list[np.ndarray]:
        """Gradients of scalar ``target`` w.r.t. each source, zeros if unreachable."""
        sources = list(sources)
        if target.size != 1:
            raise ValueError(f"gradient target must be a scalar, got shape {target.shape}")
        grads: dict[int, np.ndarray] = {id(target): np.ones_like(target.data)}
        wanted = {id(s) for s in sources}
        for out, inputs, vjp in reversed(self.records):
            g = grads.get(id(out))
            if g is None:
                continue
            if id(out) not in wanted:
                del grads[id(out)]
            in_grads = vjp(g)
            for inp, gi in zip(inputs, in_grads):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi
        return [
            grads[id(s)].reshape(s.shape) if id(s) in grads else np.zeros_like(s.data)
            for s in sources
        ]


def record(out_data: np.ndarray, inputs: tuple[Tensor, ...], vjp: VJP) -> Tensor:
    """Wrap an op result; log it on the active tape when gradients are needed."""
    if _DEBUG_FINITE and not np.all(np.isfinite(out_data)):
        raise NonFiniteError("non-finite values produced by op")
    out = Tensor(out_data)
    if _ACTIVE_TAPES and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _ACTIVE_TAPES[-1].records.append((out, inputs, vjp))
    return out
