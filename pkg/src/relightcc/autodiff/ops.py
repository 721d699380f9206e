"""Differentiable primitives.

Every function takes/returns :class:`Tensor` and registers a backward closure.
Images are NCHW throughout.
"""
from __future__ import annotations

import numpy as np

from .. import kernels
from ..errors import DivisionGuardError, InvalidInputError
from .tensor import Tensor, as_tensor, make_result

DIV_EPS = 1e-12


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_result(a.data + b.data, (a, b),
                       lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_result(a.data - b.data, (a, b),
                       lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return make_result(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if np.any(np.abs(b.data) < DIV_EPS):
        raise DivisionGuardError("divisor magnitude below 1e-12")
    out = a.data / b.data

    def bw(g):
        return (_unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None)

    return make_result(out, (a, b), bw, "div")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return make_result(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(x: Tensor) -> Tensor:
    d = x.data
    out = np.logaddexp(0.0, d)
    return make_result(out, (x,), lambda g: (g * 0.5 * (1.0 + np.tanh(0.5 * d)),), "softplus")


def square(x: Tensor) -> Tensor:
    return make_result(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def power(x: Tensor, p: float) -> Tensor:
    """x ** p for strictly positive x."""
    d = x.data
    if np.any(d <= 0):
        raise InvalidInputError("power needs strictly positive inputs")
    out = np.power(d, p)
    return make_result(out, (x,), lambda g: (g * p * out / d,), "power")


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    return make_result(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clamp")


def arccos(x: Tensor) -> Tensor:
    d = x.data
    if np.any(np.abs(d) >= 1.0):
        raise InvalidInputError("arccos argument must lie strictly inside (-1, 1); clamp first")
    return make_result(np.arccos(d), (x,), lambda g: (-g / np.sqrt(1.0 - d * d),), "arccos")


# ------------------------------------------------------------------ reductions

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axis(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(np.asarray(out), (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axis=axes, keepdims=keepdims), 1.0 / count)


def amax(x: Tensor, axis, keepdims: bool = False) -> Tensor:
    """Max over ``axis``; the gradient goes to the first maximal element (row-major)."""
    axes = _norm_axis(axis, x.ndim)
    keep = [a for a in range(x.ndim) if a not in axes]
    perm = keep + list(axes)
    moved = np.transpose(x.data, perm)
    kept_shape = moved.shape[:len(keep)]
    flat = moved.reshape(kept_shape + (-1,))
    idx = np.argmax(flat, axis=-1)
    vals = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    out_keep = tuple(1 if a in axes else x.shape[a] for a in range(x.ndim))
    out = vals.reshape(out_keep) if keepdims else vals

    def bw(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, idx[..., None], g.reshape(kept_shape)[..., None], axis=-1)
        return (np.transpose(gflat.reshape(moved.shape), np.argsort(perm)),)

    return make_result(np.asarray(out), (x,), bw, "amax")


# -------------------------------------------------------------------- reshaping

def reshape(x: Tensor, shape) -> Tensor:
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return make_result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def concat(xs, axis: int) -> Tensor:
    xs = tuple(as_tensor(t) for t in xs)
    sizes = [t.shape[axis] for t in xs]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(np.concatenate([t.data for t in xs], axis=axis), xs, bw, "concat")


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise InvalidInputError(f"matmul inner dimension mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return make_result(a.data @ b.data, (a, b), bw, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x[N, F] @ w[F, G] + b[G]."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise InvalidInputError(f"linear shape mismatch: x{x.shape} w{w.shape}")
    out = matmul(x, w)
    return add(out, b) if b is not None else out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return make_result(s, (x,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),), "softmax")


def l2_normalize(x: Tensor, axis: int = -1, eps: float = DIV_EPS) -> Tensor:
    """x / sqrt(sum(x^2) + eps) along ``axis``."""
    n = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True) + eps)
    y = x.data / n
    return make_result(y, (x,), lambda g: ((g - y * (g * x.data).sum(axis=axis, keepdims=True) / n) / n,),
                       "l2_normalize")


# ------------------------------------------------------------------ convolution

def _out_extent(n: int, k: int, stride: int, pad: int, what: str) -> int:
    span = n + 2 * pad - k
    if span < 0:
        raise InvalidInputError(f"{what}: kernel {k} larger than padded extent {n + 2 * pad}")
    if span % stride:
        raise InvalidInputError(f"{what}: ({n}+2*{pad}-{k}) not divisible by stride {stride}")
    return span // stride + 1


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x[N,C,H,W] with w[K,C,kh,kw]."""
    if x.ndim != 4 or w.ndim != 4:
        raise InvalidInputError("conv2d expects 4-D input and weight")
    n, c, h, wd = x.shape
    k, cw, kh, kw = w.shape
    if c != cw:
        raise InvalidInputError(f"conv2d channel mismatch: input {c}, weight {cw}")
    if b is not None and b.shape != (k,):
        raise InvalidInputError(f"conv2d bias must have shape ({k},)")
    ho = _out_extent(h, kh, stride, padding, "conv2d")
    wo = _out_extent(wd, kw, stride, padding, "conv2d")
    pointwise = kh == 1 and kw == 1 and stride == 1 and padding == 0
    if pointwise:
        cols = x.data.reshape(n, c, h * wd)
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
        cols = kernels.im2col(np.ascontiguousarray(xp), kh, kw, stride, ho, wo)
    wmat = w.data.reshape(k, -1)
    out = np.matmul(wmat, cols)
    if b is not None:
        out += b.data[None, :, None]
    out = out.reshape(n, k, ho, wo)

    def bw(g):
        g2 = g.reshape(n, k, ho * wo)
        gx = gw = gb = None
        if w.requires_grad:
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        if b is not None and b.requires_grad:
            gb = g2.sum(axis=(0, 2))
        if x.requires_grad:
            gcols = np.matmul(wmat.T, g2)
            if pointwise:
                gx = gcols.reshape(x.shape)
            else:
                hp, wp = h + 2 * padding, wd + 2 * padding
                gxp = kernels.col2im(gcols, n, c, hp, wp, kh, kw, stride, ho, wo)
                gx = gxp[:, :, padding:padding + h, padding:padding + wd] if padding else gxp
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return make_result(out, parents, bw, "conv2d")


# ---------------------------------------------------------------------- pooling

def maxpool2d(x: Tensor, k: int, stride: int | None = None) -> Tensor:
    stride = k if stride is None else stride
    n, c, h, w = x.shape
    if k > h or k > w:
        raise InvalidInputError(f"pool window {k} larger than input {h}x{w}")
    ho = _out_extent(h, k, stride, 0, "maxpool2d")
    wo = _out_extent(w, k, stride, 0, "maxpool2d")
    out, arg = kernels.maxpool_forward(np.ascontiguousarray(x.data), k, stride, ho, wo)
    return make_result(out, (x,), lambda g: (kernels.maxpool_backward(g, arg, h, w, k, stride),), "maxpool2d")


def avgpool2d(x: Tensor, k: int, stride: int | None = None) -> Tensor:
    stride = k if stride is None else stride
    n, c, h, w = x.shape
    if k > h or k > w:
        raise InvalidInputError(f"pool window {k} larger than input {h}x{w}")
    ho = _out_extent(h, k, stride, 0, "avgpool2d")
    wo = _out_extent(w, k, stride, 0, "avgpool2d")
    out = np.zeros((n, c, ho, wo), dtype=x.data.dtype)
    he, we = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for i in range(k):
        for j in range(k):
            out += x.data[:, :, i:i + he:stride, j:j + we:stride]
    out /= k * k

    def bw(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gk = g / (k * k)
        for i in range(k):
            for j in range(k):
                gx[:, :, i:i + he:stride, j:j + we:stride] += gk
        return (gx,)

    return make_result(out, (x,), bw, "avgpool2d")


def global_maxpool(x: Tensor) -> Tensor:
    return amax(x, axis=(2, 3), keepdims=True)


def global_avgpool(x: Tensor) -> Tensor:
    return mean(x, axis=(2, 3), keepdims=True)
