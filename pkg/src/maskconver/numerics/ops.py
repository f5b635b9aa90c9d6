"""Differentiable kernels over N x C x H x W tensors.

Every function accepts :class:`Tensor` or array-likes and returns a
:class:`Tensor`. Gradients are supplied by a vector-Jacobian product closure
registered through :func:`~maskconver.numerics.autograd.record`.
"""

from __future__ import annotations

import heapq
from typing import Any, Sequence

import numpy as np
from scipy.special import erf

from .autograd import Tensor, as_tensor, record

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise arithmetic ------------------------------------------------------

def _pair(a, b) -> tuple[Tensor, Tensor]:
    """Coerce operands; bare Python/NumPy scalars take the other operand's dtype."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor) and np.ndim(b) == 0:
        return a, Tensor(np.asarray(b, dtype=a.dtype))
    if isinstance(b, Tensor) and not isinstance(a, Tensor) and np.ndim(a) == 0:
        return Tensor(np.asarray(a, dtype=b.dtype)), b
    return as_tensor(a), as_tensor(b)


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return record(a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return record(a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    return record(ad * bd, (a, b),
                  lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return record(out, (a, b),
                  lambda g: (_unbroadcast(g / bd, ad.shape),
                             _unbroadcast(-g * out / bd, bd.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return record(-a.data, (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return record(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return record(np.log(ad), (a,), lambda g: (g / ad,))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return record(ad ** p, (a,), lambda g: (g * p * ad ** (p - 1),))


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp; gradient is zero where the clamp is active."""
    a = as_tensor(a)
    ad = a.data
    inside = (ad >= lo) & (ad <= hi)
    return record(np.clip(ad, lo, hi), (a,), lambda g: (g * inside,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    return record(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


# -- reductions and reshaping ----------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape
    axes = _norm_axes(axis, a.ndim)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return record(np.sum(a.data, axis=axes, keepdims=keepdims), (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return sum(a, axis=axes, keepdims=keepdims) / float(max(count, 1))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inv = np.argsort(axes)
    return record(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def concat(tensors: Sequence[Any], axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]
    return record(np.concatenate([t.data for t in ts], axis=axis), ts,
                  lambda g: tuple(np.split(g, splits, axis=axis)))


def take_rows(table, ids) -> Tensor:
    """``table[ids]`` along axis 0; gradient scatters back onto the used rows."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        bad = ids[(ids < 0) | (ids >= n)][0]
        raise IndexError(f"row id {bad} out of range for table with {n} rows")

    def vjp(g):
        out = np.zeros_like(table.data)
        np.add.at(out, ids, g)
        return (out,)

    return record(table.data[ids], (table,), vjp)


# -- activations -----------------------------------------------------------------

def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(xd))
    out = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(xd.dtype, copy=False)
    return record(out, (x,), lambda g: (g * out * (1.0 - out),))


def hard_sigmoid(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    out = np.clip((xd + 3.0) / 6.0, 0.0, 1.0).astype(xd.dtype, copy=False)
    slope = ((xd > -3.0) & (xd < 3.0)) / 6.0
    return record(out, (x,), lambda g: (g * slope,))


def gelu(x) -> Tensor:
    """Exact GeLU, x * Phi(x)."""
    x = as_tensor(x)
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))
    out = (xd * cdf).astype(xd.dtype, copy=False)

    def vjp(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * xd * xd)
        return (g * (cdf + xd * pdf),)

    return record(out, (x,), vjp)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return record(x.data * mask, (x,), lambda g: (g * mask,))


def log_sigmoid(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    out = -np.logaddexp(0.0, -xd)
    s = np.exp(out)
    return record(out, (x,), lambda g: (g * (1.0 - s),))


ACTIVATIONS = {"gelu": gelu, "sigmoid": sigmoid, "hard_sigmoid": hard_sigmoid}


def pointwise_activation(kind: str, x) -> Tensor:
    try:
        fn = ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; expected one of {sorted(ACTIVATIONS)}") from None
    return fn(x)


# -- dense layers ----------------------------------------------------------------

def linear(x, weight, bias=None) -> Tensor:
    """Affine map over the trailing dimension: ``x @ W.T + b``."""
    x, weight = as_tensor(x), as_tensor(weight)
    d_out, d_in = weight.shape
    if x.shape[-1] != d_in:
        raise ValueError(f"linear: trailing dim {x.shape[-1]} != weight D_in {d_in}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    inputs = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (d_out,):
            raise ValueError(f"linear: bias shape {bias.shape} != ({d_out},)")
        out = out + bias.data
        inputs = (x, weight, bias)

    def vjp(g):
        g2 = g.reshape(-1, d_out)
        grads = [g @ wd, g2.T @ xd.reshape(-1, d_in)]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return record(out, inputs, vjp)


def global_avg_pool(x) -> Tensor:
    """N x C x H x W -> N x C spatial mean."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    return record(x.data.mean(axis=(2, 3)), (x,),
                  lambda g: (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),))


def layer_norm_channels(x, gamma, beta, eps: float = 1e-6) -> Tensor:
    """Normalize the channel vector at every (n, h, w) location."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    xd = x.data
    c = xd.shape[1]
    mu = xd.mean(axis=1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gamma.data.reshape(1, c, 1, 1)
    out = xhat * gd + beta.data.reshape(1, c, 1, 1)

    def vjp(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        gx = g * gd
        dx = rstd * (gx - gx.mean(axis=1, keepdims=True)
                     - xhat * (gx * xhat).mean(axis=1, keepdims=True))
        return dx, dgamma, dbeta

    return record(out, (x, gamma, beta), vjp)


# -- convolution and pooling -----------------------------------------------------

def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _pad(a: np.ndarray, p: int, value: float = 0.0) -> np.ndarray:
    if p == 0:
        return a
    return np.pad(a, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=value)


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """Grouped 2-D cross-correlation with zero padding."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4:
        raise ValueError(f"conv2d: input must be N x C x H x W, got shape {x.shape}")
    n, c_in, h, w = x.shape
    c_out, c_in_g, kh, kw = weight.shape
    if groups < 1 or c_in % groups:
        raise ValueError(f"conv2d: C_in={c_in} not divisible by groups={groups}")
    if c_out % groups:
        raise ValueError(f"conv2d: C_out={c_out} not divisible by groups={groups}")
    if c_in_g != c_in // groups:
        raise ValueError(f"conv2d: weight C_in/groups={c_in_g}, expected {c_in // groups} (C_in={c_in})")
    if padding < 0 or stride < 1:
        raise ValueError("conv2d: padding must be >= 0 and stride >= 1")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{w}")
    inputs = (x, weight) if bias is None else (x, weight, as_tensor(bias))
    if bias is not None and inputs[2].shape != (c_out,):
        raise ValueError(f"conv2d: bias shape {inputs[2].shape} != ({c_out},)")

    xd, wd = x.data, weight.data
    s = stride
    depthwise = groups == c_in and c_in_g == 1
    xp = _pad(xd, padding)

    def window(a, i, j):
        return a[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s]

    if kh == 1 and kw == 1 and s == 1 and padding == 0 and groups == 1:
        out = np.matmul(wd[:, :, 0, 0], xd.reshape(n, c_in, h * w)).reshape(n, c_out, h, w)
    elif depthwise:
        mult = c_out // c_in
        xr = xp if mult == 1 else np.repeat(xp, mult, axis=1)
        out = np.zeros((n, c_out, ho, wo), dtype=np.result_type(xd, wd))
        for i in range(kh):
            for j in range(kw):
                out += window(xr, i, j) * wd[:, 0, i, j][None, :, None, None]
    else:
        g_out = c_out // groups
        wg = wd.reshape(groups, g_out, c_in_g, kh, kw)
        out = np.zeros((n, groups, g_out, ho * wo), dtype=np.result_type(xd, wd))
        for i in range(kh):
            for j in range(kw):
                xs = window(xp, i, j).reshape(n, groups, c_in_g, ho * wo)
                out += np.matmul(wg[:, :, :, i, j], xs)
        out = out.reshape(n, c_out, ho, wo)
    if bias is not None:
        out = out + inputs[2].data.reshape(1, c_out, 1, 1)

    def vjp(g):
        dxp = np.zeros_like(xp, dtype=np.result_type(xp, g))
        dw = np.zeros_like(wd, dtype=np.result_type(wd, g))
        if depthwise:
            mult = c_out // c_in
            xr = xp if mult == 1 else np.repeat(xp, mult, axis=1)
            for i in range(kh):
                for j in range(kw):
                    dw[:, 0, i, j] = np.einsum("ncyx,ncyx->c", window(xr, i, j), g)
                    contrib = g * wd[:, 0, i, j][None, :, None, None]
                    if mult > 1:
                        contrib = contrib.reshape(n, c_in, mult, ho, wo).sum(axis=2)
                    window(dxp, i, j)[...] += contrib
        else:
            g_out = c_out // groups
            wg = wd.reshape(groups, g_out, c_in_g, kh, kw)
            gg = g.reshape(n, groups, g_out, ho * wo)
            dwg = dw.reshape(groups, g_out, c_in_g, kh, kw)
            for i in range(kh):
                for j in range(kw):
                    xs = window(xp, i, j).reshape(n, groups, c_in_g, ho * wo)
                    dwg[:, :, :, i, j] = np.matmul(gg, xs.transpose(0, 1, 3, 2)).sum(axis=0)
                    dxs = np.matmul(wg[:, :, :, i, j].transpose(0, 2, 1), gg)
                    window(dxp, i, j)[...] += dxs.reshape(n, c_in, ho, wo)
        dx = dxp[:, :, padding:padding + h, padding:padding + w] if padding else dxp
        grads = [dx, dw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return record(out, inputs, vjp)


def max_pool2d(x, kernel: int, stride: int = 1, padding: int = 0) -> Tensor:
    """Max over each window; padded cells act as -inf."""
    x = as_tensor(x)
    if kernel < 1:
        raise ValueError("max_pool2d: kernel must be >= 1")
    n, c, h, w = x.shape
    ho = conv_output_size(h, kernel, stride, padding)
    wo = conv_output_size(w, kernel, stride, padding)
    xp = _pad(x.data, padding, -np.inf)
    s = stride
    out = np.full((n, c, ho, wo), -np.inf, dtype=x.dtype)
    arg = np.zeros((n, c, ho, wo), dtype=np.int64)
    for i in range(kernel):
        for j in range(kernel):
            win = xp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s]
            better = win > out
            out = np.where(better, win, out)
            arg = np.where(better, i * kernel + j, arg)

    def vjp(g):
        dxp = np.zeros(xp.shape, dtype=g.dtype)
        for i in range(kernel):
            for j in range(kernel):
                sel = arg == i * kernel + j
                dxp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += g * sel
        return (dxp[:, :, padding:padding + h, padding:padding + w],)

    return record(out, (x,), vjp)


def _resize_matrix(src: int, dst: int, dtype) -> np.ndarray:
    """Row k holds the half-pixel bilinear weights of output sample k."""
    m = np.zeros((dst, src), dtype=dtype)
    coord = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    coord = np.clip(coord, 0.0, src - 1)
    lo = np.floor(coord).astype(np.int64)
    hi = np.minimum(lo + 1, src - 1)
    frac = coord - lo
    rows = np.arange(dst)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def bilinear_resize(x, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize with half-pixel centers (align_corners=False)."""
    x = as_tensor(x)
    if out_h < 1 or out_w < 1:
        raise ValueError("bilinear_resize: output size must be >= 1")
    n, c, h, w = x.shape
    if (h, w) == (out_h, out_w):
        return record(x.data.copy(), (x,), lambda g: (g,))
    ry = _resize_matrix(h, out_h, x.dtype)
    rx = _resize_matrix(w, out_w, x.dtype)
    out = np.matmul(np.matmul(ry, x.data), rx.T)
    return record(out, (x,), lambda g: (np.matmul(np.matmul(ry.T, g), rx),))


# -- indexing --------------------------------------------------------------------

def gather_at(x, locations: Sequence[tuple[int, int, int]]) -> Tensor:
    """Channel vectors at (n, y, x) locations -> K x C."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    loc = np.asarray(locations, dtype=np.int64).reshape(-1, 3)
    for k, (bn, yy, xx) in enumerate(loc):
        if not (0 <= bn < n and 0 <= yy < h and 0 <= xx < w):
            raise IndexError(f"gather_at: location {k} = {(int(bn), int(yy), int(xx))} outside {n}x{h}x{w}")
    ni, yi, xi = loc[:, 0], loc[:, 1], loc[:, 2]
    out = x.data[ni, :, yi, xi].reshape(len(loc), c)

    def vjp(g):
        dx = np.zeros_like(x.data, dtype=np.result_type(x.data, g))
        np.add.at(dx, (ni, slice(None), yi, xi), g)
        return (dx,)

    return record(out, (x,), vjp)


def masks_from_embeddings(features, embeddings, batch_index) -> Tensor:
    """Per-pixel dot product of each embedding with its image's feature map."""
    features, embeddings = as_tensor(features), as_tensor(embeddings)
    n, c, h, w = features.shape
    k = embeddings.shape[0]
    if embeddings.ndim != 2 or embeddings.shape[1] != c:
        raise ValueError(f"masks_from_embeddings: embeddings {embeddings.shape} vs C={c}")
    bi = np.asarray(batch_index, dtype=np.int64).reshape(-1)
    if bi.size != k:
        raise ValueError("masks_from_embeddings: one batch index per embedding required")
    if k and (bi.min() < 0 or bi.max() >= n):
        raise IndexError("masks_from_embeddings: batch index out of range")
    fd = features.data.reshape(n, c, h * w)
    ed = embeddings.data
    out = np.empty((k, h * w), dtype=np.result_type(fd, ed))
    for b in range(n):
        sel = bi == b
        if sel.any():
            out[sel] = ed[sel] @ fd[b]

    def vjp(g):
        g2 = g.reshape(k, h * w)
        df = np.zeros_like(fd, dtype=np.result_type(fd, g))
        de = np.zeros_like(ed, dtype=np.result_type(ed, g))
        for b in range(n):
            sel = bi == b
            if sel.any():
                df[b] = ed[sel].T @ g2[sel]
                de[sel] = g2[sel] @ fd[b].T
        return df.reshape(n, c, h, w), de

    return record(out.reshape(k, h, w), (features, embeddings), vjp)


def top_k(entries: Sequence[tuple[float, Any]], k: int) -> list[tuple[float, Any]]:
    """Highest ``k`` scores, descending; equal scores ordered by payload ascending."""
    if k < 0:
        raise ValueError("top_k: k must be >= 0")
    return heapq.nsmallest(k, entries, key=lambda e: (-e[0], e[1]))
