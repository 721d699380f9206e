"""Multi-stage angular loss, Adam, and the training regimes (uip, saf, single_sie, finetune)."""
from __future__ import annotations

import collections
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import augment
from .augment import AugmentationConfig, TrainingPair
from .autodiff import ops
from .autodiff.checkpoint import load_checkpoint, save_checkpoint
from .autodiff.tensor import Tensor, no_grad
from .color import Domain, LinearImage, angular_errors, as_triple, gamma_encode
from .dataio import Manifest, kfold_split
from .errors import DataError, InvalidInputError, NumericFaultError
from .network import CascadeModel

log = logging.getLogger(__name__)

ARCCOS_DELTA = 1e-7
REGIMES = ("uip", "saf", "single_sie", "finetune")
UIP_SENSOR = "uip"


# ------------------------------------------------------------------------ loss

def angular_loss(pred: Tensor, label: Tensor, delta: float = ARCCOS_DELTA) -> Tensor:
    """Per-sample angle in degrees between (N,3) predictions and labels."""
    if np.any(np.linalg.norm(pred.data, axis=-1) == 0.0):
        raise InvalidInputError("zero-norm prediction")
    cos = ops.sum(ops.mul(ops.l2_normalize(pred, axis=-1, eps=0.0), ops.l2_normalize(label, axis=-1, eps=0.0)),
                  axis=-1)
    return ops.mul(ops.arccos(ops.clamp(cos, -1.0 + delta, 1.0 - delta)), 180.0 / math.pi)


def multistage_angular_loss(preds: Sequence[Tensor], label, delta: float = ARCCOS_DELTA) -> Tensor:
    """Sum over stages of the angular error, averaged over the batch (degrees)."""
    lab = label if isinstance(label, Tensor) else Tensor(np.atleast_2d(np.asarray(label, dtype=np.float64)))
    total = None
    for p in preds:
        p = p if isinstance(p, Tensor) else Tensor(np.atleast_2d(np.asarray(p, dtype=np.float64)))
        term = angular_loss(p, lab, delta)
        total = term if total is None else ops.add(total, term)
    return ops.mean(total)


# ----------------------------------------------------------------------- adam

@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray | None],
              state: AdamState, lr: float) -> None:
    """In-place bias-corrected Adam update of ``params``."""
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericFaultError(f"non-finite gradient for parameter {name}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# --------------------------------------------------------------------- config

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 4000
    batch_size: int = 16
    lr: float = 3e-4
    lr_halve_at: int | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    stages: int = 3
    regime: str = "single_sie"
    seed: int = 0
    scale: str = "toy"
    head_kind: str = "lightweight"
    reduction: int = 4
    val_fold: int | None = None
    folds: int = 3
    fold_seed: int = 0
    val_resize_half: bool = False
    val_every: int = 1

    def __post_init__(self):
        if self.lr <= 0:
            raise InvalidInputError("lr must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidInputError("epochs and batch_size must be positive")
        if self.lr_halve_at is not None and not 0 <= self.lr_halve_at <= self.epochs:
            raise InvalidInputError("lr_halve_at must lie within [0, epochs]")
        if self.regime not in REGIMES:
            raise InvalidInputError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        if self.val_every < 0:
            raise InvalidInputError("val_every must be >= 0")

    @property
    def halve_epoch(self) -> int:
        return self.epochs // 2 if self.lr_halve_at is None else self.lr_halve_at

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 1-based epoch; halves once after ``halve_epoch`` epochs."""
        return self.lr / 2.0 if epoch > self.halve_epoch else self.lr


@dataclass
class TrainResult:
    model: CascadeModel
    log: list[dict]
    counters: collections.Counter
    train_indices: np.ndarray
    val_indices: np.ndarray | None


# ------------------------------------------------------------------ data flow

def check_regime_data(regime: str, manifest: Manifest, init_state: dict | None) -> None:
    sensors = manifest.sensors()
    if regime == "uip":
        if sensors != [UIP_SENSOR]:
            raise DataError(f"uip regime needs imported uip images only; got sensors {sensors}")
    elif UIP_SENSOR in sensors:
        raise DataError(f"{regime} regime needs labelled raw records, not uip imports")
    if regime in ("single_sie", "finetune") and len(sensors) != 1:
        raise DataError(f"{regime} regime needs exactly one sensor; got {sensors}")
    if regime == "finetune" and init_state is None:
        raise DataError("finetune regime needs an initial checkpoint")


def make_pair(regime: str, record, rng: np.random.Generator, aug: AugmentationConfig,
              label_pool, counters) -> TrainingPair:
    if regime == "uip":
        image = record.load()
        image = image.with_pixels(image.pixels, domain=Domain.UIP)
        pair = augment.make_uip_pair(image, rng, aug.uip_channel_range)
    elif regime == "saf":
        pair = augment.make_saf_pair(record, rng, aug.uip_channel_range)
    else:
        return augment.sie_next(record, rng, aug, label_pool, counters)
    counters[pair.provenance.value] += 1
    return pair


def prepare_sample(pair: TrainingPair, rng: np.random.Generator, aug: AugmentationConfig) -> np.ndarray:
    """Photometric pair -> geometric augmentation -> gamma encode, as a (3,S,S) array."""
    image, _ = augment.geometric_augment(pair.input, pair.label, rng, aug)
    return np.transpose(gamma_encode(image.pixels), (2, 0, 1))


def model_input(pixels: np.ndarray) -> np.ndarray:
    """Linear H x W x 3 -> gamma-encoded (3,H,W) for evaluation."""
    return np.transpose(gamma_encode(pixels), (2, 0, 1))


def fit_extent(n: int, multiple: int = 16) -> int:
    return max(2 * multiple, int(round(n / multiple)) * multiple)


def model_batch_input(images: Sequence[LinearImage], resize_half: bool = False) -> np.ndarray:
    """Gamma-encoded NCHW batch; images are resized to extents the backbone accepts
    (multiples of 16), after the optional 50% reduction."""
    out = []
    for im in images:
        h, w = im.height, im.width
        if resize_half:
            h, w = h // 2, w // 2
        th, tw = fit_extent(h), fit_extent(w)
        if (th, tw) != (im.height, im.width):
            im = augment.resize_bilinear(im, th, tw)
        out.append(model_input(im.pixels))
    shapes = {a.shape for a in out}
    if len(shapes) != 1:
        raise InvalidInputError(f"cannot batch images of different sizes: {sorted(shapes)}")
    return np.stack(out)


def predict(model: CascadeModel, batch: np.ndarray) -> list[np.ndarray]:
    with no_grad():
        return [p.data.copy() for p in model(Tensor(batch))]


def train(regime: str, manifest: Manifest, config: TrainConfig,
          aug: AugmentationConfig | None = None, init_state: dict | None = None,
          log_path=None, checkpoint_path=None) -> TrainResult:
    """Train a cascade; one JSON line per epoch goes to ``log_path`` when given."""
    if regime != config.regime:
        config = replace(config, regime=regime)
    aug = aug or AugmentationConfig(rng_seed=config.seed)
    check_regime_data(regime, manifest, init_state)
    model = CascadeModel(config.scale, config.stages, config.head_kind, config.reduction, seed=config.seed)
    if init_state is not None:
        model.load_state_dict(init_state)

    if config.val_fold is not None:
        folds = kfold_split(manifest, config.folds, config.fold_seed)
        if not 0 <= config.val_fold < len(folds):
            raise InvalidInputError(f"val_fold {config.val_fold} out of range")
        train_idx, val_idx = folds[config.val_fold]
    else:
        train_idx, val_idx = np.arange(len(manifest)), None
    label_pool = manifest.label_pool(train_idx)
    records = manifest.records
    params = model.named_parameters()
    state = AdamState(config.beta1, config.beta2, config.adam_eps)
    counters: collections.Counter = collections.Counter()
    history: list[dict] = []
    log_fh = open(log_path, "w") if log_path is not None else None
    try:
        for epoch in range(1, config.epochs + 1):
            lr = config.lr_at(epoch)
            order = augment.child_rng(config.seed, epoch).permutation(train_idx)
            losses, weights = [], []
            for start in range(0, len(order), config.batch_size):
                chunk = order[start:start + config.batch_size]
                xs, ys = [], []
                for idx in chunk:
                    rng = augment.child_rng(aug.rng_seed, epoch, int(idx))
                    pair = make_pair(regime, records[idx], rng, aug, label_pool, counters)
                    xs.append(prepare_sample(pair, rng, aug))
                    ys.append(as_triple(pair.label))
                preds = model(Tensor(np.stack(xs)))
                loss = multistage_angular_loss(preds, Tensor(np.stack(ys)))
                for p in params.values():
                    p.grad = None
                loss.backward()
                adam_step({k: p.data for k, p in params.items()}, {k: p.grad for k, p in params.items()},
                          state, lr)
                losses.append(loss.item())
                weights.append(len(chunk))
            entry = {"epoch": epoch, "loss_deg": float(np.average(losses, weights=weights)), "lr": lr}
            if val_idx is not None and config.val_every and (
                    epoch % config.val_every == 0 or epoch == config.epochs):
                entry["val_mean_deg"] = float(np.mean(validation_errors(model, manifest, val_idx,
                                                                        config.val_resize_half)))
            history.append(entry)
            if log_fh is not None:
                log_fh.write(json.dumps(entry) + "\n")
                log_fh.flush()
            log.debug("epoch %d loss %.4f", epoch, entry["loss_deg"])
    finally:
        if log_fh is not None:
            log_fh.close()
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model.state_dict())
    return TrainResult(model, history, counters, train_idx, val_idx)


def stage_errors(model: CascadeModel, manifest: Manifest, indices, resize_half: bool = False,
                 batch_size: int = 32) -> np.ndarray:
    """Angular error of every stage: array (len(indices), stages)."""
    out = []
    indices = list(indices)
    for start in range(0, len(indices), batch_size):
        recs = [manifest.records[i] for i in indices[start:start + batch_size]]
        batch = model_batch_input([r.load() for r in recs], resize_half)
        preds = predict(model, batch)
        labels = np.stack([as_triple(r.label) for r in recs])
        out.append(np.stack([angular_errors(p, labels) for p in preds], axis=1))
    return np.concatenate(out, axis=0)


def validation_errors(model: CascadeModel, manifest: Manifest, indices, resize_half: bool = False) -> np.ndarray:
    return stage_errors(model, manifest, indices, resize_half)[:, -1]


def load_init_state(path) -> dict:
    return load_checkpoint(path)


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
