"""Differentiable operations on :class:`Tensor`.

Each op computes its forward value with numpy and hands a closure producing
input gradients to :func:`make`. Constants may be passed as plain arrays or
scalars wherever a Tensor is accepted.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import (
    DegenerateMaskError,
    NumericError,
    Tensor,
    as_tensor,
    current_dtype,
    make,
    unbroadcast,
)

LARGE = 1e9  # blocked-attention sentinel magnitude
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


# -- elementwise -------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make(a.data + b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make(a.data - b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def bw(g):
        return (
            unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return make(ad * bd, (a, b), bw)


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = current_dtype()(c)
    return make(x.data * c, (x,), lambda g: (g * c,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return make(y, (x,), lambda g: (g * y,))


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise NumericError("log of non-positive value")
    xd = x.data
    return make(np.log(xd), (x,), lambda g: (g / xd,))


def gelu(x) -> Tensor:
    """GELU, tanh approximation."""
    x = as_tensor(x)
    xd = x.data
    inner = _SQRT_2_OVER_PI * (xd + 0.044715 * (xd * xd * xd))
    t = np.tanh(inner)
    y = 0.5 * xd * (1.0 + t)

    def bw(g):
        dinner = _SQRT_2_OVER_PI * (1.0 + 3 * 0.044715 * xd * xd)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner),)

    return make(y, (x,), bw)


def where(cond: np.ndarray, a, b) -> Tensor:
    """Select ``a`` where ``cond`` else ``b``; ``cond`` is a constant boolean array."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    out = np.where(cond, a.data, b.data)
    sa, sb = a.shape, b.shape

    def bw(g):
        return (
            unbroadcast(np.where(cond, g, 0), sa) if a.requires_grad else None,
            unbroadcast(np.where(cond, 0, g), sb) if b.requires_grad else None,
        )

    return make(out, (a, b), bw)


# -- linear algebra & shape --------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batch broadcasting (``a @ b``)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1:
        raise NumericError("matmul needs at least 1-d operands")
    ka = a.shape[-1]
    kb = b.shape[-2] if b.ndim >= 2 else b.shape[0]
    if ka != kb:
        raise NumericError(f"matmul inner dimension mismatch: {a.shape} @ {b.shape}")
    if a.ndim < 2 or b.ndim < 2:
        raise NumericError("matmul operands must be at least 2-d")
    ad, bd = a.data, b.data

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2 and ad.ndim > 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return make(ad @ bd, (a, b), bw)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return make(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), bw)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def swapaxes(x, a1: int, a2: int) -> Tensor:
    x = as_tensor(x)
    return make(np.swapaxes(x.data, a1, a2), (x,), lambda g: (np.swapaxes(g, a1, a2),))


def _is_basic(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in items)


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    out = x.data[index]
    shape, dt = x.shape, x.data.dtype
    basic = _is_basic(index)

    def bw(g):
        full = np.zeros(shape, dtype=dt)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return make(np.array(out, copy=True), (x,), bw)


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return make(np.concatenate([t.data for t in ts], axis=axis), ts, bw)


def gather_rows(table, idx) -> Tensor:
    """Embedding lookup: ``table[idx]`` for an integer index array of any shape."""
    table = as_tensor(table)
    idx = np.asarray(idx)
    if not np.issubdtype(idx.dtype, np.integer):
        if np.any(idx != np.round(idx)):
            raise IndexError("gather indices must be integers")
        idx = idx.astype(np.int64)
    n = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"gather index out of range [0, {n})")
    shape, dt = table.shape, table.data.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dt)
        np.add.at(full, idx.reshape(-1), g.reshape(-1, *shape[1:]))
        return (full,)

    return make(table.data[idx], (table,), bw)


# -- normalisation & softmax -------------------------------------------------


def softmax_rows(x, additive_mask=None, axis: int = -1) -> Tensor:
    """Softmax along ``axis`` with an optional additive mask (0 or -LARGE).

    Raises :class:`DegenerateMaskError` if a row has every entry blocked.
    """
    x = as_tensor(x)
    z = x.data
    if additive_mask is not None:
        m = np.asarray(additive_mask, dtype=z.dtype)
        if np.any(np.all(m <= -LARGE / 2, axis=axis)):
            raise DegenerateMaskError("attention mask blocks every key of some row")
        z = z + m
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make(y, (x,), bw)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse

    def bw(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return make(y, (x,), bw)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    D = x.shape[-1]
    if D < 2:
        raise NumericError("layer_norm needs a last dimension of at least 2")
    if gamma.shape != (D,) or beta.shape != (D,):
        raise NumericError(f"layer_norm affine params must have shape ({D},)")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gamma.data

    def bw(g):
        gx = None
        if x.requires_grad:
            dxhat = g * gd
            gx = rstd * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
        flat_g = g.reshape(-1, D)
        ggamma = (flat_g * xhat.reshape(-1, D)).sum(axis=0) if gamma.requires_grad else None
        gbeta = flat_g.sum(axis=0) if beta.requires_grad else None
        return gx, ggamma, gbeta

    return make(xhat * gd + beta.data, (x, gamma, beta), bw)


def l2_normalize(x, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """``x / sqrt(sum(x**2) + eps)`` along ``axis``."""
    x = as_tensor(x)
    n = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True) + eps)
    y = x.data / n

    def bw(g):
        return ((g - y * (g * y).sum(axis=axis, keepdims=True)) / n,)

    return make(y, (x,), bw)


# -- losses --------------------------------------------------------------------


def cross_entropy_from_logits(logits, targets, weights=None) -> Tensor:
    """Mean of ``-log softmax(logits)[target]`` over rows (weighted mean if given).

    ``logits`` is ``[m, K]``; ``targets`` are class indices. ``weights`` are
    per-row 0/1 selectors and the mean divides by their sum.
    """
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise NumericError("cross_entropy_from_logits expects [m, K] logits")
    m, K = logits.shape
    t = np.asarray(targets)
    if t.shape != (m,):
        raise NumericError(f"targets shape {t.shape} does not match {m} rows")
    if m and (not np.issubdtype(t.dtype, np.integer) or t.min() < 0 or t.max() >= K):
        raise IndexError(f"class index outside [0, {K})")
    t = t.astype(np.int64)
    w = np.ones(m, dtype=logits.data.dtype) if weights is None else np.asarray(weights, dtype=logits.data.dtype)
    wsum = float(w.sum())
    if wsum <= 0:
        raise NumericError("cross entropy over an empty selection")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(m)
    nll = lse - z[rows, t]
    loss = np.asarray((w * nll).sum() / wsum)

    def bw(g):
        p = np.exp(z - lse[:, None])
        p[rows, t] -= 1.0
        return (p * (w / wsum)[:, None] * g,)

    return make(loss, (logits,), bw)


def mse(pred, target, weights=None) -> Tensor:
    """Mean squared error; with 0/1 ``weights`` the mean runs over selected cells."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise NumericError(f"mse shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    if weights is None:
        w = None
        denom = float(diff.size)
    else:
        w = np.asarray(weights, dtype=diff.dtype)
        if w.shape != diff.shape:
            raise NumericError("mse weights must match prediction shape")
        denom = float(w.sum())
    if denom <= 0:
        raise NumericError("mse over an empty selection")
    sq = diff * diff if w is None else w * diff * diff
    loss = np.asarray(sq.sum() / denom)

    def bw(g):
        gd = (2.0 / denom) * diff * g
        if w is not None:
            gd = gd * w
        return gd, -gd

    return make(loss, (pred, target), bw)


# -- convolution support -----------------------------------------------------


def im2col(x, k: int = 3, stride: int = 1, pad: int = 1) -> Tensor:
    """Unfold NHWC patches into rows: ``[B, H', W', k*k*C]``.

    Followed by a matmul with a ``[k*k*C, C_out]`` kernel this is a 2-D
    convolution.
    """
    x = as_tensor(x)
    B, H, W, C = x.shape
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (W + 2 * pad - k) // stride + 1
    cols = np.empty((B, Ho, Wo, k, k, C), dtype=x.data.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = xp[:, i : i + stride * Ho : stride, j : j + stride * Wo : stride, :]
    shape_p = xp.shape

    def bw(g):
        g = g.reshape(B, Ho, Wo, k, k, C)
        gp = np.zeros(shape_p, dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                gp[:, i : i + stride * Ho : stride, j : j + stride * Wo : stride, :] += g[:, :, :, i, j, :]
        return (gp[:, pad : pad + H, pad : pad + W, :],)

    return make(cols.reshape(B, Ho, Wo, k * k * C), (x,), bw)
