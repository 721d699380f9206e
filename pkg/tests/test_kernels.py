"""The compiled kernels and the numpy fallback must agree bit for bit (up to summation order)."""
import os
import subprocess
import sys

import numpy as np
import pytest

from relightcc import kernels
from relightcc.kernels import compiled_backend, python_backend

needs_compiled = pytest.mark.skipif(compiled_backend is None, reason="compiled extension not built")


@needs_compiled
@pytest.mark.parametrize("k,stride", [(1, 1), (3, 1), (3, 2), (7, 1), (2, 2)])
def test_im2col_col2im_agree(rng, k, stride):
    n, c, h, w = 2, 3, 9, 11
    ho, wo = (h - k) // stride + 1, (w - k) // stride + 1
    xp = rng.normal(size=(n, c, h, w))
    a = python_backend.im2col(xp, k, k, stride, ho, wo)
    b = compiled_backend.im2col(xp, k, k, stride, ho, wo)
    np.testing.assert_array_equal(a, b)
    cols = rng.normal(size=a.shape)
    np.testing.assert_allclose(python_backend.col2im(cols, n, c, h, w, k, k, stride, ho, wo),
                               compiled_backend.col2im(cols, n, c, h, w, k, k, stride, ho, wo), atol=1e-13)


def test_col2im_is_adjoint_of_im2col(rng):
    n, c, h, w, k, s = 1, 2, 7, 7, 3, 2
    ho = wo = (h - k) // s + 1
    x = rng.normal(size=(n, c, h, w))
    y = rng.normal(size=(n, c * k * k, ho * wo))
    lhs = np.sum(kernels.im2col(x, k, k, s, ho, wo) * y)
    rhs = np.sum(x * kernels.col2im(y, n, c, h, w, k, k, s, ho, wo))
    assert lhs == pytest.approx(rhs, rel=1e-12)


@needs_compiled
@pytest.mark.parametrize("k,stride", [(2, 2), (3, 1), (3, 2)])
def test_maxpool_agree(rng, k, stride):
    x = np.round(rng.normal(size=(2, 3, 8, 8)), 1)  # rounding creates ties
    ho = wo = (8 - k) // stride + 1
    pa, ia = python_backend.maxpool_forward(x, k, stride, ho, wo)
    pb, ib = compiled_backend.maxpool_forward(x, k, stride, ho, wo)
    np.testing.assert_array_equal(pa, pb)
    np.testing.assert_array_equal(np.asarray(ia), np.asarray(ib))
    g = rng.normal(size=pa.shape)
    np.testing.assert_allclose(python_backend.maxpool_backward(g, ia, 8, 8, k, stride),
                               compiled_backend.maxpool_backward(g, ib, 8, 8, k, stride), atol=1e-14)


@needs_compiled
def test_bilinear_agree(rng):
    img = rng.uniform(size=(10, 12, 3))
    ys = rng.uniform(-2, 12, size=(7, 9))
    xs = rng.uniform(-2, 14, size=(7, 9))
    np.testing.assert_allclose(python_backend.bilinear_sample(img, ys, xs),
                               compiled_backend.bilinear_sample(img, ys, xs), atol=1e-14)


def test_bilinear_hits_pixel_centres(rng):
    img = rng.uniform(size=(5, 6, 3))
    ys, xs = np.meshgrid(np.arange(5.0), np.arange(6.0), indexing="ij")
    np.testing.assert_allclose(kernels.bilinear_sample(img, ys, xs), img, atol=1e-15)


def test_pure_fallback_selected_by_env():
    env = dict(os.environ, RELIGHTCC_PURE="1")
    out = subprocess.run([sys.executable, "-c", "from relightcc import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
