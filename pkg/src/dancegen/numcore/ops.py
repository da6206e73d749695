"""Differentiable ops over :class:`Tensor`.

No broadcasting anywhere: operands of elementwise ops must have identical
shapes, and row vectors are expanded explicitly with :func:`tile_rows`.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import ShapeError, Tensor, make


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(op, a.shape, b.shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return make(a.data * c, (a,), lambda g: (g * c,), "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def bw(g):
        return g @ bd.T, ad.T @ g

    return make(ad @ bd, (a, b), bw, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("transpose", a.shape, detail="expected a matrix")
    return make(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError("reshape", a.shape, shape)
    old = a.shape
    return make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate along ``axis`` (last dim by default, rows with ``axis=0``)."""
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat", detail="no operands")
    nd = tensors[0].data.ndim
    ax = axis % nd
    for t in tensors[1:]:
        if t.data.ndim != nd or any(
            t.shape[d] != tensors[0].shape[d] for d in range(nd) if d != ax
        ):
            raise ShapeError("concat", *(t.shape for t in tensors))
    sizes = [t.shape[ax] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return np.split(g, splits, axis=ax)

    return make(np.concatenate([t.data for t in tensors], axis=ax), tensors, bw, "concat")


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    """Columns ``start:stop`` of the last dimension."""
    width = a.shape[-1]
    if not 0 <= start < stop <= width:
        raise ShapeError("slice", a.shape, detail=f"columns {start}:{stop}")
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        out[..., start:stop] = g
        return (out,)

    return make(a.data[..., start:stop].copy(), (a,), bw, "slice")


def take_rows(a: Tensor, index) -> Tensor:
    """Rows of a matrix selected by an integer index array (repeats allowed)."""
    idx = np.asarray(index, dtype=np.intp).reshape(-1)
    if a.data.ndim != 2 or (idx.size and (idx.min() < -a.shape[0] or idx.max() >= a.shape[0])):
        raise ShapeError("take_rows", a.shape, detail=f"index range {idx.min()}..{idx.max()}")
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return make(a.data[idx], (a,), bw, "take_rows")


def tile_rows(v: Tensor, n: int) -> Tensor:
    """Stack a vector ``n`` times into an ``(n, d)`` matrix."""
    if v.data.ndim != 1:
        raise ShapeError("tile_rows", v.shape, detail="expected a vector")
    return make(np.tile(v.data, (n, 1)), (v,), lambda g: (g.sum(axis=0),), "tile_rows")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return make(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return make(t, (a,), lambda g: (g * (1.0 - t * t),), "tanh")


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last dimension."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return make(s, (a,), bw, "softmax")


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return make(np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),), "sum")


def abs_sum(a: Tensor) -> Tensor:
    """Sum of absolute values; the subgradient at 0 is taken as 0."""
    sign = np.sign(a.data)
    return make(np.array(np.abs(a.data).sum()), (a,), lambda g: (sign * float(g),), "abs_sum")


def segment_mean(a: Tensor, lengths: Sequence[int]) -> Tensor:
    """Mean of consecutive row blocks of the given lengths -> (len(lengths), d)."""
    lengths = [int(n) for n in lengths]
    if a.data.ndim != 2 or sum(lengths) != a.shape[0] or min(lengths) < 1:
        raise ShapeError("segment_mean", a.shape, detail=f"lengths sum {sum(lengths)}")
    bounds = np.cumsum([0] + lengths)
    out = np.stack([a.data[bounds[i] : bounds[i + 1]].mean(axis=0) for i in range(len(lengths))])

    def bw(g):
        return (np.repeat(g / np.asarray(lengths, dtype=np.float64)[:, None], lengths, axis=0),)

    return make(out, (a,), bw, "segment_mean")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under row softmax."""
    y = np.asarray(labels, dtype=np.intp)
    if logits.data.ndim != 2 or y.shape != (logits.shape[0],):
        raise ShapeError("cross_entropy", logits.shape, y.shape)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(y.size)
    loss = -logp[rows, y].mean()

    def bw(g):
        p = np.exp(logp)
        p[rows, y] -= 1.0
        return (p * (float(g) / y.size),)

    return make(np.array(loss), (logits,), bw, "cross_entropy")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise normalization followed by a per-column gain and bias."""
    if x.data.ndim != 2 or gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise ShapeError("layer_norm", x.shape, gain.shape, bias.shape)
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gain.data

    def bw(g):
        gx = g * gd
        d = x.shape[1]
        dx = inv * (gx - gx.mean(axis=1, keepdims=True) - xhat * (gx * xhat).sum(axis=1, keepdims=True) / d)
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return make(xhat * gd + bias.data, (x, gain, bias), bw, "layer_norm")


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """One gated recurrent step; returns ``[h_new, c_new]`` as a ``(B, 2*d_s)`` matrix.

    ``weight`` is ``(d_in + d_s, 4*d_s)`` acting on ``[x; h]`` with gate
    column blocks in order input, forget, candidate, output.
    """
    bsz, d_in = x.shape
    d_s = h.shape[1]
    if (
        h.shape != (bsz, d_s)
        or c.shape != (bsz, d_s)
        or weight.shape != (d_in + d_s, 4 * d_s)
        or bias.shape != (4 * d_s,)
    ):
        raise ShapeError("lstm_cell", x.shape, h.shape, c.shape, weight.shape, bias.shape)
    xh = np.concatenate([x.data, h.data], axis=1)
    pre = xh @ weight.data + bias.data
    sig = lambda v: 0.5 * (1.0 + np.tanh(0.5 * v))  # noqa: E731
    i = sig(pre[:, :d_s])
    f = sig(pre[:, d_s : 2 * d_s])
    gc = np.tanh(pre[:, 2 * d_s : 3 * d_s])
    o = sig(pre[:, 3 * d_s :])
    c_new = f * c.data + i * gc
    tc = np.tanh(c_new)
    h_new = o * tc
    cd = c.data
    wd = weight.data

    def bw(g):
        gh = g[:, :d_s]
        gcell = g[:, d_s:] + gh * o * (1.0 - tc * tc)
        dpre = np.concatenate(
            [
                gcell * gc * i * (1.0 - i),
                gcell * cd * f * (1.0 - f),
                gcell * i * (1.0 - gc * gc),
                gh * tc * o * (1.0 - o),
            ],
            axis=1,
        )
        dxh = dpre @ wd.T
        return dxh[:, :d_in], dxh[:, d_in:], gcell * f, xh.T @ dpre, dpre.sum(axis=0)

    return make(np.concatenate([h_new, c_new], axis=1), (x, h, c, weight, bias), bw, "lstm_cell")


def band_softmax(qd: np.ndarray, kd: np.ndarray, half_width: int):
    """Windowed attention weights in band layout.

    Returns ``(alpha, cols, valid)`` where ``alpha[i, w]`` weights key row
    ``cols[i, w]``; entries with ``valid`` False are exactly zero.
    """
    n, dk = qd.shape
    half = int(half_width)
    offsets = np.arange(-half, half + 1)
    cols = np.arange(n)[:, None] + offsets[None, :]
    valid = (cols >= 0) & (cols < n)
    cols = np.clip(cols, 0, n - 1)
    inv_sqrt = 1.0 / np.sqrt(dk)
    scores = np.full((n, offsets.size), -np.inf)
    for w in range(offsets.size):
        ok = valid[:, w]
        scores[ok, w] = (qd[ok] * kd[cols[ok, w]]).sum(axis=1) * inv_sqrt
    e = np.exp(scores - scores.max(axis=1, keepdims=True))
    alpha = e / e.sum(axis=1, keepdims=True)
    return alpha, cols, valid


def banded_attention(q: Tensor, k: Tensor, v: Tensor, half_width: int) -> Tensor:
    """Scaled dot-product attention where row i sees rows ``i-half_width .. i+half_width``.

    Windows are truncated at the sequence edges and the softmax renormalized
    over the surviving entries. Scores are only ever formed for in-window
    pairs, so memory is O(n * window).
    """
    n, dk = q.shape
    if k.shape != (n, dk) or v.data.ndim != 2 or v.shape[0] != n:
        raise ShapeError("banded_attention", q.shape, k.shape, v.shape)
    qd, kd, vd = q.data, k.data, v.data
    inv_sqrt = 1.0 / np.sqrt(dk)
    alpha, cols, valid = band_softmax(qd, kd, half_width)
    width = alpha.shape[1]
    out = np.zeros((n, v.shape[1]))
    for w in range(width):
        ok = valid[:, w]
        out[ok] += alpha[ok, w, None] * vd[cols[ok, w]]

    def bw(g):
        dalpha = np.zeros_like(alpha)
        dv = np.zeros_like(vd)
        for w in range(width):
            ok = valid[:, w]
            src = cols[ok, w]
            dalpha[ok, w] = (g[ok] * vd[src]).sum(axis=1)
            dv[src] += alpha[ok, w, None] * g[ok]
        ds = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True)) * inv_sqrt
        dq = np.zeros_like(qd)
        dk_ = np.zeros_like(kd)
        for w in range(width):
            ok = valid[:, w]
            src = cols[ok, w]
            dq[ok] += ds[ok, w, None] * kd[src]
            dk_[src] += ds[ok, w, None] * qd[ok]
        return dq, dk_, dv

    return make(out, (q, k, v), bw, "banded_attention")


def band_pair_count(n: int, half_width: int) -> int:
    """Number of (i, j) pairs scored by :func:`banded_attention` for length ``n``."""
    half = int(half_width)
    rows = np.arange(n)
    lo = np.maximum(rows - half, 0)
    hi = np.minimum(rows + half, n - 1)
    return int((hi - lo + 1).sum())
