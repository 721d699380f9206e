"""Central finite-difference gradient checks."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Worst |a - n| / max(|a|, |n|, floor).

    Entries smaller than ``floor`` are effectively held to an absolute bound;
    central differences carry ~1e-11 of rounding noise on exactly-zero gradients.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    b = np.asarray(numeric, dtype=np.float64).ravel()
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / scale)) if a.size else 0.0


def numeric_grad(fn: Callable[[], Tensor], t: Tensor, h: float = 1e-5,
                 indices: Sequence[tuple] | None = None) -> np.ndarray:
    """d fn()/d t by central differences, at every index or only at ``indices``."""
    grad = np.zeros_like(t.data)
    targets = indices if indices is not None else list(np.ndindex(*t.shape))
    with no_grad():
        for idx in targets:
            orig = t.data[idx]
            t.data[idx] = orig + h
            fp = fn().item()
            t.data[idx] = orig - h
            fm = fn().item()
            t.data[idx] = orig
            grad[idx] = (fp - fm) / (2.0 * h)
    return grad


def check_gradients(fn: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-5,
                    indices: dict | None = None) -> float:
    """Largest relative error between backprop and finite differences over ``tensors``.

    ``indices`` optionally maps a tensor position in ``tensors`` to the entries
    to probe (everything is probed otherwise).
    """
    for t in tensors:
        t.grad = None
    fn().backward()
    worst = 0.0
    for pos, t in enumerate(tensors):
        idx = None if indices is None else indices.get(pos)
        num = numeric_grad(fn, t, h=h, indices=idx)
        ana = t.grad if t.grad is not None else np.zeros_like(t.data)
        if idx is not None:
            ana = np.array([ana[i] for i in idx])
            num = np.array([num[i] for i in idx])
        worst = max(worst, relative_error(ana, num))
    return worst
