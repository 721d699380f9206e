"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from relightcc.kernels import compiled_backend, python_backend


def cases(rng):
    n, c, h, w, k, s = 16, 32, 34, 34, 3, 1
    ho = wo = (h - k) // s + 1
    xp = rng.normal(size=(n, c, h, w))
    cols = rng.normal(size=(n, c * k * k, ho * wo))
    pool_in = rng.normal(size=(n, c, 32, 32))
    img = rng.uniform(size=(128, 128, 3))
    ys, xs = np.meshgrid(np.linspace(0, 127, 96), np.linspace(0, 127, 96), indexing="ij")
    return {
        "im2col 16x32x34x34 k3": lambda b: b.im2col(xp, k, k, s, ho, wo),
        "col2im 16x32x34x34 k3": lambda b: b.col2im(cols, n, c, h, w, k, k, s, ho, wo),
        "maxpool fwd 16x32x32x32": lambda b: b.maxpool_forward(pool_in, 2, 2, 16, 16),
        "bilinear 96x96 from 128x128": lambda b: b.bilinear_sample(img, ys, xs),
    }


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    if compiled_backend is None:
        print("compiled backend not built; only the numpy fallback is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<30s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, fn in cases(rng).items():
        py = min(timeit.repeat(lambda: fn(python_backend), number=1, repeat=args.repeat)) * 1e3
        if compiled_backend is None:
            print(f"{name:<30s} {py:10.3f} {'-':>10s} {'-':>8s}")
            continue
        cy = min(timeit.repeat(lambda: fn(compiled_backend), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<30s} {py:10.3f} {cy:10.3f} {py / cy:7.1f}x")


if __name__ == "__main__":
    main()
