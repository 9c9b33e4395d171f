"""Differentiable primitives over :class:`Tensor`."""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor, accumulate, as_tensor, make_result

MASK_VALUE = -1e9


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# elementwise binary ---------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        accumulate(a, _unbroadcast(g, a.shape))
        accumulate(b, _unbroadcast(g, b.shape))

    return make_result(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        accumulate(a, _unbroadcast(g, a.shape))
        accumulate(b, _unbroadcast(-g, b.shape))

    return make_result(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            accumulate(b, _unbroadcast(g * a.data, b.shape))

    return make_result(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        if a.requires_grad:
            accumulate(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            accumulate(b, _unbroadcast(-g * out / b.data, b.shape))

    return make_result(out, (a, b), bw)


def maximum(a, b) -> Tensor:
    """Elementwise max; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data >= b.data

    def bw(g):
        accumulate(a, _unbroadcast(np.where(pick_a, g, 0.0), a.shape))
        accumulate(b, _unbroadcast(np.where(pick_a, 0.0, g), b.shape))

    return make_result(np.where(pick_a, a.data, b.data), (a, b), bw)


def minimum(a, b) -> Tensor:
    """Elementwise min; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data

    def bw(g):
        accumulate(a, _unbroadcast(np.where(pick_a, g, 0.0), a.shape))
        accumulate(b, _unbroadcast(np.where(pick_a, 0.0, g), b.shape))

    return make_result(np.where(pick_a, a.data, b.data), (a, b), bw)


# elementwise unary ----------------------------------------------------------

def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return make_result(out, (x,), lambda g: accumulate(x, g * out))


def log(x) -> Tensor:
    x = as_tensor(x)
    return make_result(np.log(x.data), (x,), lambda g: accumulate(x, g / x.data))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return make_result(out, (x,), lambda g: accumulate(x, g * 0.5 / out))


def abs(x) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    return make_result(np.abs(x.data), (x,), lambda g: accumulate(x, g * np.sign(x.data)))


def relu(x) -> Tensor:
    x = as_tensor(x)
    on = x.data > 0
    return make_result(np.where(on, x.data, 0.0), (x,), lambda g: accumulate(x, g * on))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = _stable_sigmoid(x.data)
    return make_result(out, (x,), lambda g: accumulate(x, g * out * (1.0 - out)))


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def log_sigmoid(x) -> Tensor:
    """``log(sigmoid(x))`` without overflow."""
    x = as_tensor(x)
    z = x.data
    out = np.minimum(z, 0.0) - np.log1p(np.exp(-np.abs(z)))
    s = _stable_sigmoid(z)
    return make_result(out, (x,), lambda g: accumulate(x, g * (1.0 - s)))


def clip(x, lo: float, hi: float) -> Tensor:
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return make_result(np.clip(x.data, lo, hi), (x,), lambda g: accumulate(x, g * inside))


def power(x, p: float) -> Tensor:
    x = as_tensor(x)
    return make_result(x.data ** p, (x,), lambda g: accumulate(x, g * p * x.data ** (p - 1)))


# reductions and shape -------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        accumulate(x, np.broadcast_to(g, x.shape))

    return make_result(np.asarray(out), (x,), bw)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    count = 1
    for a in axes:
        count *= x.shape[a]
    return mul(sum(x, axis=axes, keepdims=keepdims), 1.0 / count)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    in_shape = x.shape
    return make_result(x.data.reshape(shape), (x,), lambda g: accumulate(x, g.reshape(in_shape)))


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_result(x.data.transpose(axes), (x,), lambda g: accumulate(x, g.transpose(inv)))


def broadcast_to(x, shape) -> Tensor:
    x = as_tensor(x)
    return make_result(np.broadcast_to(x.data, shape), (x,),
                       lambda g: accumulate(x, _unbroadcast(g, x.shape)))


def _is_basic(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis or p is None for p in parts)


def index(x, idx) -> Tensor:
    x = as_tensor(x)
    basic = _is_basic(idx)

    def bw(g):
        full = np.zeros_like(x.data)
        if basic:
            full[idx] = g
        else:
            # fancy indices may repeat; add.at accumulates duplicates
            np.add.at(full, idx, g)
        accumulate(x, full)

    return make_result(x.data[idx], (x,), bw)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[ax] = slice(lo, hi)
                accumulate(t, g[tuple(sl)])

    return make_result(np.concatenate([t.data for t in tensors], axis=ax), tensors, bw)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis % (t.ndim + 1)] + (1,) + t.shape[axis % (t.ndim + 1):])
                for t in tensors]
    return concat(expanded, axis=axis)


# linear algebra -------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2) if b.ndim > 1 else np.multiply.outer(g, b.data)
            accumulate(a, _unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            accumulate(b, _unbroadcast(gb, b.shape))

    return make_result(a.data @ b.data, (a, b), bw)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` over the last axis of an arbitrary-rank ``x``."""
    x, weight = as_tensor(x), as_tensor(weight)
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents.append(bias)

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        if x.requires_grad:
            accumulate(x, (g2 @ weight.data.T).reshape(x.shape))
        if weight.requires_grad:
            accumulate(weight, x2.T @ g2)
        if bias is not None and bias.requires_grad:
            accumulate(bias, g2.sum(axis=0))

    return make_result(out.reshape(lead + (weight.shape[-1],)), parents, bw)


# normalisation and attention primitives ------------------------------------

def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"softmax axis {axis} out of range for rank {x.ndim}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        accumulate(x, out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return make_result(out, (x,), bw)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"log_softmax axis {axis} out of range for rank {x.ndim}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def bw(g):
        accumulate(x, g - p * g.sum(axis=axis, keepdims=True))

    return make_result(out, (x,), bw)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    c = x.shape[-1]
    if gain.shape != (c,) or bias.shape != (c,):
        raise ValueError(f"layer_norm affine shape {gain.shape}/{bias.shape} != ({c},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def bw(g):
        if gain.requires_grad:
            accumulate(gain, (g * xhat).reshape(-1, c).sum(axis=0))
        if bias.requires_grad:
            accumulate(bias, g.reshape(-1, c).sum(axis=0))
        if x.requires_grad:
            gx = g * gain.data
            gx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                        - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
            accumulate(x, gx)

    return make_result(xhat * gain.data + bias.data, (x, gain, bias), bw)


def scaled_dot_attention(q, k, v, key_mask: np.ndarray | None = None) -> Tensor:
    """softmax(q k^T / sqrt(d)) v over the last two axes.

    ``key_mask`` is a boolean array broadcastable to the score shape with
    True marking usable keys; excluded keys get an additive ``MASK_VALUE``.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    d = q.shape[-1]
    scores = matmul(q, transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)))
    scores = mul(scores, 1.0 / math.sqrt(d))
    if key_mask is not None:
        scores = add(scores, np.where(key_mask, 0.0, MASK_VALUE))
    return matmul(softmax(scores, axis=-1), v)


# spatial ops (channels-last, [..., H, W, C]) --------------------------------

def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution on ``[N, H, W, Cin]`` with ``weight[kh, kw, Cin, Cout]``."""
    x, weight = as_tensor(x), as_tensor(weight)
    n, h, w, cin = x.shape
    kh, kw, wcin, cout = weight.shape
    if wcin != cin:
        raise ValueError(f"conv2d channel mismatch: input {cin}, kernel {wcin}")
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else x.data
    hp, wp = xp.shape[1], xp.shape[2]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    # win: [n, hp-kh+1, wp-kw+1, cin, kh, kw]
    win = win[:, ::stride, ::stride][:, :ho, :wo]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * ho * wo, kh * kw * cin)
    wmat = weight.data.reshape(kh * kw * cin, cout)
    out = cols @ wmat
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents.append(bias)

    def bw(g):
        g2 = g.reshape(-1, cout)
        if weight.requires_grad:
            accumulate(weight, (cols.T @ g2).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            accumulate(bias, g2.sum(axis=0))
        if x.requires_grad:
            gcols = (g2 @ wmat.T).reshape(n, ho, wo, kh, kw, cin)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += gcols[:, :, :, i, j, :]
            if padding:
                gxp = gxp[:, padding:padding + h, padding:padding + w, :]
            accumulate(x, gxp)

    return make_result(out.reshape(n, ho, wo, cout), parents, bw)


def upsample_nearest2x(x) -> Tensor:
    """Nearest-neighbour ×2 upsampling of ``[N, H, W, C]``."""
    x = as_tensor(x)
    n, h, w, c = x.shape
    out = np.broadcast_to(x.data[:, :, None, :, None, :], (n, h, 2, w, 2, c)).reshape(n, 2 * h, 2 * w, c)

    def bw(g):
        accumulate(x, g.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4)))

    return make_result(out, (x,), bw)


def bilinear_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Interpolation weights ``[n_out, n_in]`` with half-pixel centres and edge clamping."""
    a = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = (i + 0.5) * scale - 0.5
        src = min(max(src, 0.0), n_in - 1)
        lo = int(math.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        a[i, lo] += 1.0 - frac
        a[i, hi] += frac
    return a


def resize_bilinear(x, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize over the last two axes of ``[..., H, W]``."""
    x = as_tensor(x)
    h, w = x.shape[-2], x.shape[-1]
    ah = bilinear_matrix(out_h, h)
    aw = bilinear_matrix(out_w, w)
    return matmul(matmul(ah, x), aw.T)
