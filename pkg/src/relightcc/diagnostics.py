"""Finite-difference gradient suite and parameter accounting."""
from __future__ import annotations

import time

import numpy as np

from .autodiff import ops
from .autodiff.gradcheck import check_gradients
from .autodiff.tensor import Tensor
from .network import BackboneConfig, CascadeModel, FC4Head, Isam, LightweightHead
from .training import multistage_angular_loss

LAYER_TOL = 1e-4
END_TO_END_TOL = 1e-3


def _t(rng, *shape, lo=None, hi=None):
    data = rng.normal(size=shape) if lo is None else rng.uniform(lo, hi, size=shape)
    return Tensor(data, requires_grad=True)


def _weighted(rng, out: Tensor) -> Tensor:
    """Random linear functional of ``out`` so every output entry matters."""
    return ops.sum(ops.mul(out, Tensor(rng.normal(size=out.shape))))


def layer_checks(seed: int = 0) -> dict[str, float]:
    """Max relative error of backprop vs central differences for every primitive and block."""
    rng = np.random.default_rng(seed)
    res: dict[str, float] = {}

    def run(name, make_loss, tensors):
        res[name] = check_gradients(make_loss, tensors)

    x = _t(rng, 2, 3, 7, 7)
    w = _t(rng, 4, 3, 3, 3)
    b = _t(rng, 4)
    r = Tensor(rng.normal(size=(2, 4, 7, 7)))
    run("conv2d_3x3_pad1", lambda: ops.sum(ops.mul(ops.conv2d(x, w, b, 1, 1), r)), [x, w, b])
    r2 = Tensor(rng.normal(size=(2, 4, 3, 3)))
    run("conv2d_3x3_stride2", lambda: ops.sum(ops.mul(ops.conv2d(x, w, b, 2, 0), r2)), [x, w, b])
    w1 = _t(rng, 5, 3, 1, 1)
    run("conv2d_1x1", lambda: _weighted(np.random.default_rng(1), ops.conv2d(x, w1)), [x, w1])
    run("conv2d_sum", lambda: ops.sum(ops.conv2d(x, w, b, 1, 0)), [x, w, b])

    xp = _t(rng, 2, 3, 4, 4)
    run("maxpool2d", lambda: _weighted(np.random.default_rng(2), ops.maxpool2d(xp, 2)), [xp])
    run("avgpool2d", lambda: _weighted(np.random.default_rng(3), ops.avgpool2d(xp, 2)), [xp])
    run("global_maxpool", lambda: _weighted(np.random.default_rng(4), ops.global_maxpool(xp)), [xp])
    run("global_avgpool", lambda: _weighted(np.random.default_rng(5), ops.global_avgpool(xp)), [xp])
    run("channel_max", lambda: _weighted(np.random.default_rng(6), ops.amax(xp, axis=1, keepdims=True)), [xp])

    a = _t(rng, 4, 5)
    lw = _t(rng, 5, 3)
    lb = _t(rng, 3)
    run("linear", lambda: _weighted(np.random.default_rng(7), ops.linear(a, lw, lb)), [a, lw, lb])
    m1, m2 = _t(rng, 2, 3, 4), _t(rng, 2, 4, 5)
    run("matmul_batched", lambda: _weighted(np.random.default_rng(8), ops.matmul(m1, m2)), [m1, m2])
    run("softmax", lambda: _weighted(np.random.default_rng(9), ops.softmax(a, axis=-1)), [a])
    run("relu", lambda: _weighted(np.random.default_rng(10), ops.relu(a)), [a])
    run("sigmoid", lambda: _weighted(np.random.default_rng(11), ops.sigmoid(a)), [a])
    run("softplus", lambda: _weighted(np.random.default_rng(12), ops.softplus(a)), [a])
    c = _t(rng, 4, 5, lo=0.5, hi=2.0)
    row = _t(rng, 5)
    col = _t(rng, 4, 1)
    run("add_broadcast", lambda: _weighted(np.random.default_rng(13), ops.add(a, row)), [a, row])
    run("sub", lambda: _weighted(np.random.default_rng(22), ops.sub(a, c)), [a, c])
    run("mul_broadcast", lambda: _weighted(np.random.default_rng(14), ops.mul(a, col)), [a, col])
    run("div", lambda: _weighted(np.random.default_rng(15), ops.div(a, c)), [a, c])
    run("power", lambda: _weighted(np.random.default_rng(23), ops.power(c, 1 / 2.2)), [c])
    run("l2_normalize", lambda: _weighted(np.random.default_rng(16), ops.l2_normalize(a, axis=1)), [a])
    q = _t(rng, 6, lo=-0.9, hi=0.9)
    run("arccos", lambda: _weighted(np.random.default_rng(17), ops.arccos(ops.clamp(q, -1 + 1e-7, 1 - 1e-7))), [q])
    run("concat_transpose", lambda: _weighted(np.random.default_rng(18),
                                              ops.transpose(ops.concat([a, c], axis=1), (1, 0))), [a, c])

    feats = _t(rng, 2, 8, 6, 6)
    isam = Isam(8, rng, reduction=4)
    run("isam_forward", lambda: _weighted(np.random.default_rng(19), isam(feats)),
        [feats] + isam.parameters())
    hf = _t(rng, 2, 16, 4, 4, lo=0.0, hi=1.0)
    head = LightweightHead(16, rng)
    run("lightweight_head", lambda: _weighted(np.random.default_rng(20), head(hf)), [hf] + head.parameters())
    fc4 = FC4Head(16, rng)
    run("fc4_head", lambda: _weighted(np.random.default_rng(21), fc4(hf)), [hf, fc4.conv7.w, fc4.conv7.b])
    return res


def cascade_check(seed: int = 0, stages: int = 2) -> float:
    """End-to-end check: toy cascade + multi-stage loss, 3 probed parameter entries."""
    rng = np.random.default_rng(seed)
    model = CascadeModel("toy", stages=stages, seed=seed)
    image = Tensor(rng.uniform(0.05, 1.0, size=(2, 3, 32, 32)))
    label = Tensor(np.array([[0.3, 0.8, 0.52], [0.5, 0.7, 0.5]]))
    params = model.named_parameters()
    probe = [params["backbone.layers.0.w"], params["head.global_fc1.w"], params[f"isam.{stages - 1}.0.spatial.w"]]
    indices = {0: [(1, 2, 0, 1)], 1: [(3, 2)], 2: [(0, 1, 3, 4)]}
    return check_gradients(lambda: multistage_angular_loss(model(image), label), probe, indices=indices)


def run_gradcheck_suite(seed: int = 0) -> dict:
    start = time.perf_counter()
    layers = layer_checks(seed)
    end_to_end = cascade_check(seed)
    return {"layers": layers, "layer_max": max(layers.values()), "cascade": end_to_end,
            "passed": max(layers.values()) < LAYER_TOL and end_to_end < END_TO_END_TOL,
            "seconds": time.perf_counter() - start}


# ------------------------------------------------------------------ counting

def fc4_head_count(channels: int = 512) -> int:
    return FC4Head(channels, np.random.default_rng(0)).count_params()


def parameter_report() -> dict:
    out = {}
    for scale in ("toy", "paper"):
        m3 = CascadeModel(scale, stages=3)
        m1 = CascadeModel(scale, stages=1)
        groups = m3.group_counts()
        out[scale] = {
            **groups,
            "total_m1": m1.count_params(),
            "sharing_identity": m3.count_params() == m1.count_params() + 2 * groups["isam_per_stage"],
            "fc4_head": fc4_head_count(BackboneConfig(scale).head_channels),
        }
    return out
