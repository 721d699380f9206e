"""Cascaded illuminant estimator.

One backbone and one head are shared by all stages; every stage owns its own
set of attention modules (one per insertion site in the backbone).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import ops
from .autodiff.tensor import Tensor, make_result
from .color import GAMMA
from .errors import CheckpointMismatchError, InvalidInputError, NumericFaultError

MIN_STAGE_COMPONENT = 1e-6


class Module:
    """Collects parameters from Tensor / Module / list attributes in definition order."""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}

        def visit(name, value):
            if isinstance(value, Tensor):
                if value.requires_grad:
                    out[name] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(name + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    visit(f"{name}.{i}", item)

        for key, value in vars(self).items():
            if not key.startswith("_"):
                visit(prefix + key, value)
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def count_params(self) -> int:
        return sum(p.size for p in self.parameters())


def _param(rng: np.random.Generator, shape, fan_in: int, gain: float = 2.0) -> Tensor:
    return Tensor(rng.normal(0.0, math.sqrt(gain / fan_in), size=shape), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class Conv(Module):
    def __init__(self, cin: int, cout: int, k: int, rng, stride: int = 1, padding: int = 0):
        self.w = _param(rng, (cout, cin, k, k), cin * k * k)
        self.b = _zeros((cout,))
        self._stride, self._padding = stride, padding

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.w, self.b, stride=self._stride, padding=self._padding)


class Dense(Module):
    def __init__(self, fin: int, fout: int, rng):
        self.w = _param(rng, (fin, fout), fin)
        self.b = _zeros((fout,))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.w, self.b)


class Fire(Module):
    def __init__(self, cin: int, squeeze: int, e1: int, e3: int, rng):
        self.squeeze = Conv(cin, squeeze, 1, rng)
        self.expand1 = Conv(squeeze, e1, 1, rng)
        self.expand3 = Conv(squeeze, e3, 3, rng, padding=1)
        self.out_channels = e1 + e3

    def __call__(self, x: Tensor) -> Tensor:
        s = ops.relu(self.squeeze(x))
        return ops.concat([ops.relu(self.expand1(s)), ops.relu(self.expand3(s))], axis=1)


def pad2d(x: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    h, w = x.shape[2:]
    data = np.pad(x.data, ((0, 0), (0, 0), (top, bottom), (left, right)))
    return make_result(data, (x,), lambda g: (g[:, :, top:top + h, left:left + w],), "pad2d")


def take_channels(x: Tensor, start: int, stop: int) -> Tensor:
    def bw(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[:, start:stop] = g
        return (full,)

    return make_result(x.data[:, start:stop].copy(), (x,), bw, "take_channels")


# ------------------------------------------------------------------- attention

class Isam(Module):
    """Channel gate from pooled descriptors, then a 7x7 spatial gate."""

    def __init__(self, channels: int, rng, reduction: int = 4):
        hidden = max(1, channels // reduction)
        self.channel_fc1 = Dense(channels, hidden, rng)
        self.channel_fc2 = Dense(hidden, channels, rng)
        self.spatial = Conv(2, 1, 7, rng, padding=3)
        self.channels = channels

    def gates(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise InvalidInputError(f"attention expects {self.channels} channels, got shape {x.shape}")
        n, c = x.shape[:2]
        gmp = ops.reshape(ops.global_maxpool(x), (n, c))
        gap = ops.reshape(ops.global_avgpool(x), (n, c))

        def mlp(v):
            return self.channel_fc2(ops.relu(self.channel_fc1(v)))

        cgate = ops.sigmoid(ops.add(mlp(gmp), mlp(gap)))
        x1 = ops.mul(x, ops.reshape(cgate, (n, c, 1, 1)))
        pooled = ops.concat([ops.amax(x1, axis=1, keepdims=True), ops.mean(x1, axis=1, keepdims=True)], axis=1)
        sgate = ops.sigmoid(self.spatial(pooled))
        return ops.mul(x1, sgate), cgate, sgate

    def __call__(self, x: Tensor, gate_log: list | None = None) -> Tensor:
        out, cgate, sgate = self.gates(x)
        if gate_log is not None:
            gate_log.append({"channel": cgate.data.copy(), "spatial": sgate.data.copy()})
        return out


def isam_forward(x: Tensor, params: Isam, stage_index: int = 0) -> Tensor:
    del stage_index  # parameters already belong to one stage
    return params(x)


# -------------------------------------------------------------------- backbone

@dataclass(frozen=True)
class BackboneConfig:
    scale: str = "toy"

    @property
    def head_channels(self) -> int:
        return {"toy": 32, "paper": 512}[self.scale]

    def layout(self) -> list:
        """Stem spec and layer list; ``'pool'`` entries are 2x2 max-pools, ``'isam_pool'``
        pools preceded by an attention site."""
        if self.scale == "toy":
            return [("stem", 3, 16), "pool", ("fire", 16, 8, 16, 16), "isam_pool",
                    ("fire", 32, 8, 16, 16), "isam_pool"]
        if self.scale == "paper":
            return [("stem", 3, 64), "pool",
                    ("fire", 64, 16, 64, 64), ("fire", 128, 16, 64, 64), "isam_pool",
                    ("fire", 128, 32, 128, 128), ("fire", 256, 32, 128, 128), "isam_pool",
                    ("fire", 256, 48, 192, 192), ("fire", 384, 48, 192, 192),
                    ("fire", 384, 64, 256, 256)]
        raise InvalidInputError(f"unknown backbone scale {self.scale!r}")

    def site_channels(self) -> list[int]:
        chans, out = 0, []
        for item in self.layout():
            if isinstance(item, tuple):
                chans = item[2] if item[0] == "stem" else item[3] + item[4]
            elif item == "isam_pool":
                out.append(chans)
        return out


class Backbone(Module):
    def __init__(self, config: BackboneConfig, rng):
        self._config = config
        self._plan: list = []
        self.layers: list[Module] = []
        for item in config.layout():
            if isinstance(item, tuple) and item[0] == "stem":
                self.layers.append(Conv(item[1], item[2], 3, rng, stride=2))
                self._plan.append("stem")
            elif isinstance(item, tuple):
                self.layers.append(Fire(*item[1:], rng))
                self._plan.append("fire")
            else:
                self._plan.append(item)

    def __call__(self, x: Tensor, isams, gate_log: list | None = None) -> Tensor:
        layers = iter(self.layers)
        sites = iter(isams)
        for step in self._plan:
            if step == "stem":
                h, w = x.shape[2:]
                # TF-style "same" padding so even extents survive a stride-2 3x3 conv
                ph, pw = max(0, (h + 1) // 2 * 2 + 1 - h), max(0, (w + 1) // 2 * 2 + 1 - w)
                x = ops.relu(next(layers)(pad2d(x, ph // 2, ph - ph // 2, pw // 2, pw - pw // 2)))
            elif step == "fire":
                x = next(layers)(x)
            else:
                if step == "isam_pool":
                    x = next(sites)(x, gate_log)
                x = ops.maxpool2d(x, 2)
        return x


# ----------------------------------------------------------------------- heads

class NonLocal(Module):
    """Embedded-Gaussian non-local block with a residual connection."""

    def __init__(self, channels: int, inner: int, rng):
        self.theta = Conv(channels, inner, 1, rng)
        self.phi = Conv(channels, inner, 1, rng)
        self.g = Conv(channels, inner, 1, rng)
        self.out = Conv(inner, channels, 1, rng)

    def __call__(self, x: Tensor) -> Tensor:
        n, _, h, w = x.shape
        inner = self.theta.w.shape[0]
        th = ops.reshape(self.theta(x), (n, inner, h * w))
        ph = ops.reshape(self.phi(x), (n, inner, h * w))
        gv = ops.reshape(self.g(x), (n, inner, h * w))
        attn = ops.softmax(ops.matmul(ops.transpose(th, (0, 2, 1)), ph), axis=-1)
        y = ops.matmul(gv, ops.transpose(attn, (0, 2, 1)))
        return ops.add(x, self.out(ops.reshape(y, (n, inner, h, w))))


class LightweightHead(Module):
    """Local branch (pool, squeeze, non-local, 1x1 -> 3) times global branch (MLP + sigmoid)."""

    def __init__(self, channels: int, rng):
        c4, c8 = channels // 4, channels // 8
        self.local_squeeze = Conv(channels, c4, 1, rng)
        self.nonlocal_block = NonLocal(c4, c8, rng)
        self.local_out = Conv(c4, 3, 1, rng)
        self.global_fc1 = Dense(channels, c8, rng)
        self.global_fc2 = Dense(c8, 3, rng)

    def branches(self, feats: Tensor) -> tuple[Tensor, Tensor]:
        if feats.shape[2] < 2 or feats.shape[3] < 2:
            raise InvalidInputError(f"head needs spatial extent >= 2, got {feats.shape[2:]}")
        n = feats.shape[0]
        loc = ops.maxpool2d(feats, 2)
        loc = self.nonlocal_block(self.local_squeeze(loc))
        loc = ops.softplus(ops.reshape(ops.global_avgpool(self.local_out(loc)), (n, 3)))
        glob = ops.reshape(ops.global_avgpool(feats), (n, feats.shape[1]))
        glob = ops.sigmoid(self.global_fc2(ops.relu(self.global_fc1(glob))))
        return loc, glob

    def __call__(self, feats: Tensor) -> Tensor:
        loc, glob = self.branches(feats)
        return ops.l2_normalize(ops.mul(loc, glob), axis=1)


lightweight_head = LightweightHead


class _Counter:
    def __init__(self):
        self.count = 0


# Samples for which every confidence was zero and the plain spatial mean was used.
zero_confidence_fallbacks = _Counter()


def confidence_weighted_pool(rgb: Tensor, conf: Tensor) -> Tensor:
    """Normalized sum(conf * rgb) / sum(conf) over space; rgb (N,3,H,W), conf (N,1,H,W)."""
    n = rgb.shape[0]
    den = conf.data.sum(axis=(2, 3)).reshape(n)
    dead = den <= 1e-12
    if dead.any():
        zero_confidence_fallbacks.count += int(dead.sum())
        conf = ops.add(conf, dead.astype(np.float64).reshape(n, 1, 1, 1))
    num = ops.sum(ops.mul(rgb, conf), axis=(2, 3))
    total = ops.sum(conf, axis=(2, 3))
    return ops.l2_normalize(ops.div(num, total), axis=1)


class FC4Head(Module):
    """6x6 conv -> relu -> 1x1 conv to (rgb, confidence), confidence-weighted pooling."""

    def __init__(self, channels: int, rng):
        self.conv6 = Conv(channels, 64, 6, rng, padding=3)
        self.conv7 = Conv(64, 4, 1, rng)
        # positive start so the relu'd estimates and confidences begin non-zero
        self.conv7.b.data[...] = 1.0

    def __call__(self, feats: Tensor) -> Tensor:
        if feats.shape[2] < 2 or feats.shape[3] < 2:
            raise InvalidInputError(f"head needs spatial extent >= 2, got {feats.shape[2:]}")
        out = ops.relu(self.conv7(ops.relu(self.conv6(feats))))
        return confidence_weighted_pool(take_channels(out, 0, 3), take_channels(out, 3, 4))


fc4_baseline_head = FC4Head


# --------------------------------------------------------------------- cascade

def encoded_gains(ell: Tensor) -> Tensor:
    """Per-channel divisor that white-balances a gamma-encoded image by a unit illuminant.

    The estimate is rescaled so white maps to (1,1,1), then raised to the encoding
    gamma: gamma(raw) / (sqrt(3) * ell) ** GAMMA == gamma(raw / (sqrt(3) * ell)).
    """
    return ops.power(ops.mul(ell, math.sqrt(3.0)), GAMMA)


class CascadeModel(Module):
    def __init__(self, scale: str = "toy", stages: int = 3, head_kind: str = "lightweight",
                 reduction: int = 4, seed: int = 0):
        if stages < 1:
            raise InvalidInputError("need at least one stage")
        rng = np.random.default_rng(seed)
        self._config = BackboneConfig(scale)
        self._meta = {"scale": scale, "stages": stages, "head_kind": head_kind, "reduction": reduction}
        self.backbone = Backbone(self._config, rng)
        ch = self._config.head_channels
        if head_kind == "lightweight":
            self.head = LightweightHead(ch, rng)
        elif head_kind == "fc4_baseline":
            self.head = FC4Head(ch, rng)
        else:
            raise InvalidInputError(f"unknown head kind {head_kind!r}")
        self.isam = [[Isam(c, rng, reduction) for c in self._config.site_channels()] for _ in range(stages)]

    @property
    def stages(self) -> int:
        return len(self.isam)

    @property
    def config(self) -> dict:
        return dict(self._meta)

    def stage_estimate(self, x: Tensor, stage: int, gate_log: list | None = None) -> Tensor:
        return self.head(self.backbone(x, self.isam[stage], gate_log))

    def forward(self, image: Tensor, gate_log: list | None = None) -> list[Tensor]:
        """Cumulative per-stage illuminant estimates for a gamma-encoded (N,3,H,W) batch."""
        if image.ndim != 4 or image.shape[1] != 3:
            raise InvalidInputError(f"expected (N,3,H,W) input, got {image.shape}")
        n = image.shape[0]
        preds: list[Tensor] = []
        gains = None
        for i in range(self.stages):
            x = image if gains is None else ops.div(image, ops.reshape(encoded_gains(gains), (n, 3, 1, 1)))
            est = self.stage_estimate(x, i, gate_log)
            if np.min(est.data) < MIN_STAGE_COMPONENT:
                raise NumericFaultError(f"stage {i + 1} estimate has a component below {MIN_STAGE_COMPONENT}")
            gains = est if gains is None else ops.l2_normalize(ops.mul(gains, est), axis=1)
            preds.append(gains)
        return preds

    __call__ = forward

    # parameter bookkeeping -------------------------------------------------
    def group_counts(self) -> dict[str, int]:
        per_stage = [sum(m.count_params() for m in stage) for stage in self.isam]
        return {
            "backbone": self.backbone.count_params(),
            "head": self.head.count_params(),
            "isam_per_stage": per_stage[0],
            "isam": sum(per_stage),
            "total": self.count_params(),
        }

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise CheckpointMismatchError(
                f"checkpoint keys differ: missing={sorted(missing)[:5]} unexpected={sorted(extra)[:5]}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise CheckpointMismatchError(f"{name}: checkpoint shape {arr.shape} != model {p.shape}")
            p.data[...] = arr

    @classmethod
    def from_state(cls, state: dict[str, np.ndarray], reduction: int | None = None) -> "CascadeModel":
        """Rebuild the architecture a checkpoint was saved from, then load it."""
        stem = state.get("backbone.layers.0.w")
        if stem is None:
            raise CheckpointMismatchError("checkpoint has no backbone stem")
        scale = {16: "toy", 64: "paper"}.get(stem.shape[0])
        if scale is None:
            raise CheckpointMismatchError(f"unrecognized stem width {stem.shape[0]}")
        stages = 1 + max(int(k.split(".")[1]) for k in state if k.startswith("isam."))
        head_kind = "fc4_baseline" if "head.conv6.w" in state else "lightweight"
        if reduction is None:
            fc1 = state["isam.0.0.channel_fc1.w"]
            reduction = fc1.shape[0] // fc1.shape[1]
        model = cls(scale=scale, stages=stages, head_kind=head_kind, reduction=reduction)
        model.load_state_dict(state)
        return model


def cascade_forward(model: CascadeModel, image: Tensor) -> list[Tensor]:
    return model.forward(image)


def count_params(model: Module) -> int:
    return model.count_params()
