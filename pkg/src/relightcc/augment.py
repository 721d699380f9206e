"""Illuminant samplers, relighting-based training pairs, and geometric augmentation."""
from __future__ import annotations

import collections
import enum
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .color import Domain, Illuminant, LinearImage, as_triple, correct, normalize, relight
from .errors import InvalidInputError, SensorMismatchError


class Provenance(str, enum.Enum):
    ORIGINAL = "original"
    RESHUFFLE = "reshuffle"
    RANDOM_RELIGHT = "random_relight"
    UIP_SYNTHETIC = "uip_synthetic"
    SAF_SYNTHETIC = "saf_synthetic"


SIE_CHOICES = (Provenance.ORIGINAL, Provenance.RESHUFFLE, Provenance.RANDOM_RELIGHT)


@dataclass(frozen=True)
class AugmentationConfig:
    mix_weights: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    crop_fraction_range: tuple[float, float] = (0.1, 1.0)
    rotation_deg_range: tuple[float, float] = (-30.0, 30.0)
    hflip_prob: float = 0.5
    output_size: int = 64
    relight_gain_range: tuple[float, float] = (0.6, 1.4)
    uip_channel_range: tuple[float, float] = (0.2, 0.8)
    rng_seed: int = 0

    def __post_init__(self):
        w = np.asarray(self.mix_weights, dtype=np.float64)
        if w.shape != (3,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise InvalidInputError(f"mix_weights must be 3 non-negative numbers summing to 1: {self.mix_weights}")
        for name in ("crop_fraction_range", "rotation_deg_range", "relight_gain_range", "uip_channel_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise InvalidInputError(f"{name} is degenerate: {(lo, hi)}")
        lo, hi = self.crop_fraction_range
        if lo <= 0 or hi > 1:
            raise InvalidInputError("crop fractions must lie in (0, 1]")
        if self.relight_gain_range[0] <= 0 or self.uip_channel_range[0] <= 0:
            raise InvalidInputError("gain ranges must be positive")
        if not 0 <= self.hflip_prob <= 1:
            raise InvalidInputError("hflip_prob must be a probability")
        if self.output_size <= 0 or self.output_size % 2:
            raise InvalidInputError("output_size must be a positive even integer")


@dataclass
class TrainingPair:
    input: LinearImage
    label: Illuminant
    provenance: Provenance


def child_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for (seed, epoch, sample index, ...)."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]])


def _image_of(record) -> LinearImage:
    return record.load() if hasattr(record, "load") else record.image


# ------------------------------------------------------------------- samplers

def sample_uip_illuminant(rng: np.random.Generator,
                          channel_range: tuple[float, float] = (0.2, 0.8)) -> Illuminant:
    raw = rng.uniform(channel_range[0], channel_range[1], size=3)
    return uip_illuminant_from_draw(raw)


def uip_illuminant_from_draw(raw) -> Illuminant:
    """Double the green channel of a raw RGB draw and L2-normalize."""
    v = np.array(as_triple(raw), dtype=np.float64)
    v[1] *= 2.0
    return Illuminant.from_array(normalize(v))


# --------------------------------------------------------------- pair makers

def make_uip_pair(uip_image: LinearImage, rng: np.random.Generator,
                  channel_range: tuple[float, float] = (0.2, 0.8)) -> TrainingPair:
    if uip_image.domain is not Domain.UIP:
        raise InvalidInputError(f"expected a uip image, got {uip_image.domain.value}")
    ell = sample_uip_illuminant(rng, channel_range)
    return TrainingPair(relight(uip_image, ell), ell, Provenance.UIP_SYNTHETIC)


def make_saf_pair(record, rng: np.random.Generator,
                  channel_range: tuple[float, float] = (0.2, 0.8)) -> TrainingPair:
    """Correct a labelled raw image, then relight it with a freshly sampled illuminant."""
    awb = correct(_image_of(record), record.label)
    ell = sample_uip_illuminant(rng, channel_range)
    return TrainingPair(relight(awb, ell), ell, Provenance.SAF_SYNTHETIC)


def make_reshuffle_pair(record, donor_label, donor_sensor: str | None = None) -> TrainingPair:
    if donor_sensor is not None and donor_sensor != record.sensor_id:
        raise SensorMismatchError(
            f"donor label from sensor {donor_sensor!r} used for a {record.sensor_id!r} record")
    donor = donor_label if isinstance(donor_label, Illuminant) else Illuminant.from_array(donor_label)
    awb = correct(_image_of(record), record.label)
    return TrainingPair(relight(awb, donor), donor, Provenance.RESHUFFLE)


def make_random_relight_pair(record, rng: np.random.Generator,
                             gain_range: tuple[float, float] = (0.6, 1.4),
                             gains: Sequence[float] | None = None) -> TrainingPair:
    s = rng.uniform(gain_range[0], gain_range[1], size=3) if gains is None else as_triple(gains)
    image = _image_of(record)
    px = image.pixels * s
    if image.mask is not None:
        px[image.mask] = 0.0
    label = Illuminant.from_array(normalize(as_triple(record.label) * s))
    return TrainingPair(image.with_pixels(px, domain=Domain.RAW), label, Provenance.RANDOM_RELIGHT)


def original_pair(record) -> TrainingPair:
    return TrainingPair(_image_of(record), record.label, Provenance.ORIGINAL)


def sie_next(record, rng: np.random.Generator, config: AugmentationConfig,
             label_pool: Mapping[str, Sequence[Illuminant]] | None = None,
             counters: collections.Counter | None = None) -> TrainingPair:
    """Draw one training pair from the no-aug / reshuffle / random-relight mix.

    Reshuffle donors come from ``label_pool[record.sensor_id]``; with no donors
    the draw falls back to the original pair and ``counters['empty_pool']`` grows.
    """
    choice = SIE_CHOICES[int(rng.choice(3, p=np.asarray(config.mix_weights, dtype=np.float64)))]
    if choice is Provenance.RESHUFFLE:
        pool = (label_pool or {}).get(record.sensor_id) or ()
        if not pool:
            if counters is not None:
                counters["empty_pool"] += 1
            choice = Provenance.ORIGINAL
        else:
            donor = pool[int(rng.integers(len(pool)))]
            pair = make_reshuffle_pair(record, donor, record.sensor_id)
    if choice is Provenance.ORIGINAL:
        pair = original_pair(record)
    elif choice is Provenance.RANDOM_RELIGHT:
        pair = make_random_relight_pair(record, rng, config.relight_gain_range)
    if counters is not None:
        counters[pair.provenance.value] += 1
    return pair


# ----------------------------------------------------------------- geometry

@dataclass(frozen=True)
class GeometricParams:
    crop_y: int
    crop_x: int
    crop_side: int
    angle_deg: float = 0.0
    flip: bool = False

    @property
    def inscribed_side(self) -> float:
        """Side of the largest axis-aligned square inside the rotated crop."""
        t = math.radians(self.angle_deg)
        return self.crop_side / (abs(math.cos(t)) + abs(math.sin(t)))


def draw_geometric_params(height: int, width: int, rng: np.random.Generator,
                          config: AugmentationConfig, max_tries: int = 8) -> GeometricParams:
    short = min(height, width)
    for _ in range(max_tries):
        frac = rng.uniform(*config.crop_fraction_range)
        side = int(round(frac * short))
        angle = rng.uniform(*config.rotation_deg_range)
        flip = bool(rng.random() < config.hflip_prob)
        if side < 2:
            continue
        params = GeometricParams(int(rng.integers(0, height - side + 1)),
                                 int(rng.integers(0, width - side + 1)), side, angle, flip)
        if params.inscribed_side >= 2.0:
            return params
    raise InvalidInputError(f"crop degenerated below 2 px after {max_tries} attempts")


def warp_coordinates(params: GeometricParams, out_h: int, out_w: int) -> tuple[np.ndarray, np.ndarray]:
    """Source (y, x) pixel-center coordinates for every output pixel."""
    inner = params.inscribed_side
    v = ((np.arange(out_h) + 0.5) / out_h - 0.5) * inner
    u = ((np.arange(out_w) + 0.5) / out_w - 0.5) * inner
    if params.flip:
        u = -u
    vv, uu = np.meshgrid(v, u, indexing="ij")
    t = math.radians(params.angle_deg)
    c, s = math.cos(t), math.sin(t)
    cy = params.crop_y + params.crop_side / 2.0 - 0.5
    cx = params.crop_x + params.crop_side / 2.0 - 0.5
    return cy + s * uu + c * vv, cx + c * uu - s * vv


def apply_geometric(image: LinearImage, params: GeometricParams, out_h: int, out_w: int | None = None) -> LinearImage:
    out_w = out_h if out_w is None else out_w
    ys, xs = warp_coordinates(params, out_h, out_w)
    px = kernels.bilinear_sample(np.ascontiguousarray(image.pixels), ys, xs)
    np.maximum(px, 0.0, out=px)
    mask = None
    if image.mask is not None:
        m = kernels.bilinear_sample(image.mask.astype(np.float64)[..., None].copy(), ys, xs)[..., 0]
        mask = m > 0.0
        px[mask] = 0.0
    return LinearImage(px, image.domain, mask, image.sensor_id, dict(image.meta))


def resize_bilinear(image: LinearImage, out_h: int, out_w: int) -> LinearImage:
    """Axis-aligned bilinear resize with pixel-center alignment."""
    ys = (np.arange(out_h) + 0.5) * (image.height / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (image.width / out_w) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    px = kernels.bilinear_sample(np.ascontiguousarray(image.pixels), yy, xx)
    mask = None
    if image.mask is not None:
        m = kernels.bilinear_sample(image.mask.astype(np.float64)[..., None].copy(), yy, xx)[..., 0]
        mask = m > 0.0
        px[mask] = 0.0
    return LinearImage(px, image.domain, mask, image.sensor_id, dict(image.meta))


def geometric_augment(image: LinearImage, label, rng: np.random.Generator,
                      config: AugmentationConfig) -> tuple[LinearImage, Illuminant]:
    if image.height <= 2 or image.width <= 2:
        raise InvalidInputError("image must be larger than 2x2")
    params = draw_geometric_params(image.height, image.width, rng, config)
    return apply_geometric(image, params, config.output_size), label
