"""Linear-domain color math: von Kries relighting, angular error, gamma and tone curves."""
from __future__ import annotations

import enum
import math
import threading
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from .errors import DivisionGuardError, InvalidInputError

DIV_EPS = 1e-12
GAMMA = 1.0 / 2.2


class Domain(str, enum.Enum):
    RAW = "raw"
    AWB = "awb"
    UIP = "uip"


@dataclass(frozen=True)
class Illuminant:
    r: float
    g: float
    b: float

    @classmethod
    def from_array(cls, v) -> "Illuminant":
        v = np.asarray(v, dtype=np.float64).reshape(3)
        return cls(float(v[0]), float(v[1]), float(v[2]))

    @classmethod
    def white(cls) -> "Illuminant":
        s = 1.0 / math.sqrt(3.0)
        return cls(s, s, s)

    def as_array(self) -> np.ndarray:
        return np.array([self.r, self.g, self.b], dtype=np.float64)

    def normalized(self) -> "Illuminant":
        v = self.as_array()
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise InvalidInputError(f"illuminant components must be finite and >= 0: {v}")
        n = float(np.linalg.norm(v))
        if n < DIV_EPS:
            raise InvalidInputError("cannot normalize a zero illuminant")
        return Illuminant.from_array(v / n)

    def __iter__(self):
        return iter((self.r, self.g, self.b))


IlluminantLike = Union[Illuminant, np.ndarray, tuple, list]


def as_triple(ell: IlluminantLike) -> np.ndarray:
    if isinstance(ell, Illuminant):
        return ell.as_array()
    v = np.asarray(ell, dtype=np.float64)
    if v.shape != (3,):
        raise InvalidInputError(f"expected an RGB triple, got shape {v.shape}")
    return v


def normalize(ell: IlluminantLike) -> np.ndarray:
    v = as_triple(ell)
    n = float(np.linalg.norm(v))
    if not math.isfinite(n) or n < DIV_EPS:
        raise InvalidInputError("cannot normalize a zero or non-finite triple")
    return v / n


@dataclass
class LinearImage:
    """H x W x 3 linear-domain image; ``mask`` marks excluded pixels (True = excluded)."""

    pixels: np.ndarray
    domain: Domain = Domain.RAW
    mask: np.ndarray | None = None
    sensor_id: str | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3:
            raise InvalidInputError(f"pixels must be H x W x 3, got {px.shape}")
        if not np.all(np.isfinite(px)):
            raise InvalidInputError("pixels contain non-finite values")
        if np.any(px < 0):
            raise InvalidInputError("pixels contain negative values")
        self.pixels = px
        self.domain = Domain(self.domain)
        if self.mask is not None:
            m = np.asarray(self.mask, dtype=bool)
            if m.shape != px.shape[:2]:
                raise InvalidInputError("mask shape does not match the image")
            self.mask = m

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def with_pixels(self, pixels: np.ndarray, **changes) -> "LinearImage":
        return replace(self, pixels=pixels, meta=dict(self.meta), **changes)

    def valid(self) -> np.ndarray:
        """Boolean H x W map of usable (unmasked) pixels."""
        if self.mask is None:
            return np.ones(self.pixels.shape[:2], dtype=bool)
        return ~self.mask


def _zero_masked(px: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    if mask is not None:
        px[mask] = 0.0
    return px


def relight(image: LinearImage, ell: IlluminantLike) -> LinearImage:
    """Apply illuminant gains per channel: white-balanced -> raw."""
    if image.domain not in (Domain.AWB, Domain.UIP):
        raise InvalidInputError(f"relight expects an awb/uip image, got {image.domain.value}")
    gains = as_triple(ell)
    if not np.all(np.isfinite(gains)) or np.any(gains <= 0):
        raise InvalidInputError(f"illuminant components must be positive: {gains}")
    px = _zero_masked(image.pixels * gains, image.mask)
    return image.with_pixels(px, domain=Domain.RAW)


def correct(image: LinearImage, ell: IlluminantLike) -> LinearImage:
    """Divide out illuminant gains per channel: raw -> white-balanced."""
    gains = as_triple(ell)
    if not np.all(np.isfinite(gains)) or np.any(gains <= DIV_EPS):
        raise DivisionGuardError(f"illuminant component too small to divide by: {gains}")
    px = _zero_masked(image.pixels / gains, image.mask)
    return image.with_pixels(px, domain=Domain.AWB)


def angular_error(a: IlluminantLike, b: IlluminantLike) -> float:
    """Angle in degrees between two RGB directions.

    Evaluated as atan2(|a x b|, a . b) on the normalized triples, which equals the
    clamped arccos of the cosine but stays accurate near 0 and 180 degrees.
    """
    va, vb = as_triple(a), as_triple(b)
    na, nb = float(np.linalg.norm(va)), float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0 or not (math.isfinite(na) and math.isfinite(nb)):
        raise InvalidInputError("angular error needs two nonzero finite triples")
    return float(angular_errors(va[None] / na, vb[None] / nb)[0])


def angular_errors(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise angular error for two (N, 3) arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    nb = np.linalg.norm(b, axis=-1, keepdims=True)
    if np.any(na == 0) or np.any(nb == 0):
        raise InvalidInputError("angular error needs nonzero triples")
    ua, ub = a / na, b / nb
    sin = np.linalg.norm(np.cross(ua, ub), axis=-1)
    cos = np.sum(ua * ub, axis=-1)
    return np.degrees(np.arctan2(sin, cos))


class _ClipCounter:
    def __init__(self):
        self._lock = threading.Lock()
        self.count = 0

    def add(self, n: int) -> None:
        if n:
            with self._lock:
                self.count += n

    def reset(self) -> None:
        with self._lock:
            self.count = 0


# Number of channel values clipped above 1 by gamma/tone transforms since import.
clip_counter = _ClipCounter()


def _unit_range(x: np.ndarray, what: str) -> np.ndarray:
    if np.any(x < 0):
        raise InvalidInputError(f"{what}: negative channel value")
    over = x > 1.0
    n = int(np.count_nonzero(over))
    if n:
        clip_counter.add(n)
        x = np.minimum(x, 1.0)
    return x


def _apply(image, fn):
    if isinstance(image, LinearImage):
        return image.with_pixels(_zero_masked(fn(image.pixels), image.mask))
    return fn(np.asarray(image, dtype=np.float64))


def gamma_encode(image, gamma: float = GAMMA):
    """x -> x**gamma on [0, 1]; values above 1 are clipped and counted."""
    return _apply(image, lambda x: np.power(_unit_range(x, "gamma_encode"), gamma))


def gamma_decode(image, gamma: float = GAMMA):
    return _apply(image, lambda x: np.power(_unit_range(x, "gamma_decode"), 1.0 / gamma))


def tone_map(x):
    """Smoothstep tone curve 3x^2 - 2x^3."""
    x = np.asarray(x, dtype=np.float64)
    return x * x * (3.0 - 2.0 * x)


def inverse_tone_map(y):
    y = np.clip(np.asarray(y, dtype=np.float64), 0.0, 1.0)
    x = 0.5 - np.sin(np.arcsin(1.0 - 2.0 * y) / 3.0)
    # sin(pi/6) rounds just below 0.5; pin the endpoints exactly
    return np.where(y <= 0.0, 0.0, np.where(y >= 1.0, 1.0, x))


def _check_srgb_range(x: np.ndarray) -> np.ndarray:
    if np.any(x < -1e-6) or np.any(x > 1.0 + 1e-6):
        raise InvalidInputError("sRGB input must lie in [0, 1]")
    return np.clip(x, 0.0, 1.0)


def unprocess_srgb(image):
    """sRGB-like [0,1] values -> white-balanced linear (de-gamma, then inverse tone map)."""

    def fn(x):
        x = _check_srgb_range(x)
        return np.clip(inverse_tone_map(np.power(x, 1.0 / GAMMA)), 0.0, 1.0)

    if isinstance(image, LinearImage):
        return image.with_pixels(_zero_masked(fn(image.pixels), image.mask), domain=Domain.UIP)
    return fn(np.asarray(image, dtype=np.float64))


def reprocess(image):
    """Inverse of :func:`unprocess_srgb`: tone map, then gamma encode."""

    def fn(x):
        x = _unit_range(x, "reprocess")
        return np.power(tone_map(x), GAMMA)

    return _apply(image, fn)
