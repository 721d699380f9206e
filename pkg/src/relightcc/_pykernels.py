"""Pure-numpy implementations of the hot kernels.

Every function here has a twin with the same signature in ``_ckernels.pyx``;
``relightcc.kernels`` picks one at import time.
"""
import numpy as np


def im2col(xp, kh, kw, stride, ho, wo):
    """(N, C, Hp, Wp) padded input -> (N, C*kh*kw, ho*wo) patch matrix."""
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=xp.dtype)
    he = stride * (ho - 1) + 1
    we = stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + he:stride, j:j + we:stride]
    return cols.reshape(n, c * kh * kw, ho * wo)


def col2im(cols, n, c, hp, wp, kh, kw, stride, ho, wo):
    """Adjoint of :func:`im2col`: scatter-add patches back into (N, C, Hp, Wp)."""
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    he = stride * (ho - 1) + 1
    we = stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + he:stride, j:j + we:stride] += cols[:, :, i, j]
    return out


def maxpool_forward(x, k, stride, ho, wo):
    """Windowed max; also returns the winning window offset (row-major, first on ties)."""
    he = stride * (ho - 1) + 1
    we = stride * (wo - 1) + 1
    best = x[:, :, 0:he:stride, 0:we:stride].copy()
    arg = np.zeros(best.shape, dtype=np.int64)
    for i in range(k):
        for j in range(k):
            if i == 0 and j == 0:
                continue
            cand = x[:, :, i:i + he:stride, j:j + we:stride]
            better = cand > best
            best[better] = cand[better]
            arg[better] = i * k + j
    return best, arg


def maxpool_backward(gout, arg, h, w, k, stride):
    n, c, ho, wo = gout.shape
    gx = np.zeros((n, c, h, w), dtype=gout.dtype)
    he = stride * (ho - 1) + 1
    we = stride * (wo - 1) + 1
    for i in range(k):
        for j in range(k):
            sel = arg == (i * k + j)
            if sel.any():
                gx[:, :, i:i + he:stride, j:j + we:stride] += np.where(sel, gout, 0.0)
    return gx


def bilinear_sample(img, ys, xs):
    """Sample an (H, W, C) image at float coordinates with edge clamping."""
    h, w = img.shape[:2]
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.minimum(np.floor(ys).astype(np.int64), h - 1)
    x0 = np.minimum(np.floor(xs).astype(np.int64), w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[..., None]
    fx = (xs - x0)[..., None]
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy
