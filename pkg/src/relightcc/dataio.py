"""Dataset records, manifests, the CCRAW container, PPM import and synthetic Mondrian scenes.

CCRAW layout (little-endian)::

    b"CCRW1\\n"  u32 width  u32 height  float32[height][width][3]
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .augment import sample_uip_illuminant
from .color import Domain, Illuminant, LinearImage, as_triple, relight, unprocess_srgb
from .errors import (BadMagicError, FormatError, InvalidInputError, InvalidMetadataError,
                     UnsupportedFormatError)

CCRAW_MAGIC = b"CCRW1\n"
CCRAW_HEADER = len(CCRAW_MAGIC) + 8


# ----------------------------------------------------------------------- CCRAW

def encode_ccraw(pixels: np.ndarray) -> bytes:
    px = np.asarray(pixels)
    if px.ndim != 3 or px.shape[2] != 3:
        raise InvalidInputError(f"CCRAW stores H x W x 3 images, got {px.shape}")
    payload = np.ascontiguousarray(px, dtype="<f4")
    if not np.all(np.isfinite(payload)):
        raise FormatError("CCRAW payload must be finite")
    h, w = px.shape[:2]
    return CCRAW_MAGIC + struct.pack("<II", w, h) + payload.tobytes()


def decode_ccraw(blob: bytes) -> np.ndarray:
    if not blob.startswith(CCRAW_MAGIC):
        raise BadMagicError("not a CCRAW file")
    if len(blob) < CCRAW_HEADER:
        raise FormatError("truncated CCRAW header")
    w, h = struct.unpack_from("<II", blob, len(CCRAW_MAGIC))
    need = CCRAW_HEADER + 12 * w * h
    if len(blob) != need:
        raise FormatError(f"CCRAW payload size {len(blob) - CCRAW_HEADER} != {12 * w * h}")
    px = np.frombuffer(blob, dtype="<f4", offset=CCRAW_HEADER).reshape(h, w, 3)
    if not np.all(np.isfinite(px)):
        raise FormatError("CCRAW payload contains non-finite values")
    return px.astype(np.float32)


def write_ccraw(path, image) -> None:
    pixels = image.pixels if isinstance(image, LinearImage) else image
    with open(path, "wb") as fh:
        fh.write(encode_ccraw(pixels))


def read_ccraw(path, domain: Domain = Domain.RAW) -> LinearImage:
    with open(path, "rb") as fh:
        px = decode_ccraw(fh.read())
    return LinearImage(px.astype(np.float64), domain)


# ------------------------------------------------------------------------- PPM

def read_ppm(path) -> np.ndarray:
    """Binary P6 PPM with maxval 255 -> uint8 H x W x 3."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PPM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P6":
        raise UnsupportedFormatError(f"only binary P6 PPM is supported, got {tokens[0]!r}")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError("malformed PPM header") from exc
    if maxval != 255:
        raise UnsupportedFormatError(f"only maxval 255 is supported, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    body = data[pos:pos + w * h * 3]
    if len(body) != w * h * 3:
        raise FormatError("truncated PPM payload")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).copy()


def write_ppm(path, rgb8: np.ndarray) -> None:
    rgb8 = np.asarray(rgb8, dtype=np.uint8)
    h, w = rgb8.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(rgb8).tobytes())


def import_ppm_as_uip(path) -> LinearImage:
    srgb = read_ppm(path).astype(np.float64) / 255.0
    return unprocess_srgb(LinearImage(srgb, Domain.UIP))


# --------------------------------------------------------------------- records

@dataclass
class SampleRecord:
    image_path: str
    label: Illuminant
    sensor_id: str
    black_level: tuple[float, float, float] = (0.0, 0.0, 0.0)
    saturation: float = 1.0
    mask_rect: tuple[int, int, int, int] | None = None
    _image: LinearImage | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not isinstance(self.label, Illuminant):
            self.label = Illuminant.from_array(self.label)
        bl = np.broadcast_to(np.asarray(self.black_level, dtype=np.float64), (3,))
        self.black_level = tuple(float(v) for v in bl)
        if self.mask_rect is not None:
            self.mask_rect = tuple(int(v) for v in self.mask_rect)

    @classmethod
    def from_image(cls, image: LinearImage, label, sensor_id: str = "mem", **kw) -> "SampleRecord":
        """In-memory record whose ``load()`` returns ``image`` unchanged."""
        rec = cls("<memory>", label, sensor_id, **kw)
        rec._image = image
        return rec

    def load(self) -> LinearImage:
        if self._image is None:
            self._image = preprocess(self)
        return self._image

    @property
    def image(self) -> LinearImage:
        return self.load()

    def to_json(self, base: Path | None = None) -> dict:
        path = self.image_path
        if base is not None:
            try:
                path = os.path.relpath(path, base)
            except ValueError:
                pass
        return {"image": path, "label": [float(v) for v in self.label], "sensor_id": self.sensor_id,
                "black_level": list(self.black_level), "saturation": float(self.saturation),
                "mask_rect": list(self.mask_rect) if self.mask_rect is not None else None}


@dataclass
class Manifest:
    records: list[SampleRecord]
    name: str = "dataset"
    fold_count: int = 3
    root: Path | None = None

    def __post_init__(self):
        if not self.records:
            raise InvalidInputError("manifest has no records")
        for r in self.records:
            if not r.sensor_id:
                raise InvalidInputError(f"record {r.image_path} has no sensor_id")

    def __len__(self) -> int:
        return len(self.records)

    def sensors(self) -> list[str]:
        return sorted({r.sensor_id for r in self.records})

    def label_pool(self, indices: Sequence[int] | None = None) -> dict[str, list[Illuminant]]:
        pool: dict[str, list[Illuminant]] = {}
        for i in (range(len(self.records)) if indices is None else indices):
            r = self.records[i]
            pool.setdefault(r.sensor_id, []).append(r.label)
        return pool

    def to_json(self) -> dict:
        return {"name": self.name, "fold_count": self.fold_count,
                "records": [r.to_json(self.root) for r in self.records]}

    def save(self, path) -> None:
        path = Path(path)
        if self.root is None:
            self.root = path.parent
        path.write_text(json.dumps(self.to_json(), indent=1) + "\n")


def load_manifest(path) -> Manifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read manifest {path}: {exc}") from exc
    root = path.parent
    records = []
    try:
        for item in doc["records"]:
            img = Path(item["image"])
            records.append(SampleRecord(
                image_path=str(img if img.is_absolute() else root / img),
                label=Illuminant.from_array(item["label"]),
                sensor_id=item["sensor_id"],
                black_level=tuple(np.broadcast_to(np.asarray(item.get("black_level", 0.0), float), (3,))),
                saturation=float(item.get("saturation", 1.0)),
                mask_rect=tuple(item["mask_rect"]) if item.get("mask_rect") else None,
            ))
        return Manifest(records, name=doc.get("name", path.stem), fold_count=int(doc.get("fold_count", 3)),
                        root=root)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed manifest {path}: {exc}") from exc


def preprocess(record: SampleRecord) -> LinearImage:
    """Mask the calibration rectangle, then black-level subtract and saturation-normalize to [0, 1]."""
    black = np.asarray(record.black_level, dtype=np.float64)
    sat = float(record.saturation)
    if np.any(sat <= black):
        raise InvalidMetadataError(f"saturation {sat} must exceed black level {black}")
    raw = record._image if record._image is not None else read_ccraw(record.image_path)
    px = raw.pixels.copy()
    mask = np.zeros(px.shape[:2], dtype=bool) if raw.mask is None else raw.mask.copy()
    if record.mask_rect is not None:
        x, y, w, h = record.mask_rect
        mask[max(0, y):max(0, y + h), max(0, x):max(0, x + w)] = True
    px = np.clip((px - black) / (sat - black), 0.0, 1.0)
    px[mask] = 0.0
    return LinearImage(px, Domain.RAW, mask if mask.any() else None, record.sensor_id)


# ------------------------------------------------------------------ synthesis

def mondrian_scene(rng: np.random.Generator, size: int, grid: int, bias: float,
                   achromatic_prob: float, gray_level: float = 1.0) -> np.ndarray:
    """White-balanced grid of flat reflectance patches (H x W x 3)."""
    refl = rng.uniform(0.05, 0.95, size=(grid * grid, 3))
    refl = np.clip(refl * np.array([1.0 + bias, 1.0, 1.0 - bias]), 0.0, 1.0)
    if rng.random() < achromatic_prob:
        refl[int(rng.integers(grid * grid))] = gray_level
    edges = np.linspace(0, size, grid + 1).round().astype(int)
    cell_y = np.searchsorted(edges[1:], np.arange(size), side="right")
    idx = cell_y[:, None] * grid + cell_y[None, :]
    return refl[idx]


def synth_mondrian(n_scenes: int, patch_grid: int, bias: float, achromatic_prob: float,
                   rng: np.random.Generator, out_dir=None, size: int = 64,
                   sensor_id: str = "mondrian", name: str = "mondrian",
                   gray_level: float = 1.0) -> tuple[Manifest, list[np.ndarray]]:
    """Generate relit Mondrian scenes; writes ``raw/`` and ``awb/`` CCRAW files when ``out_dir`` is given.

    Returns the manifest and the white-balanced scenes.
    """
    if patch_grid < 2:
        raise InvalidInputError("patch_grid must be >= 2")
    if size < patch_grid:
        raise InvalidInputError("image size must be at least patch_grid")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "raw").mkdir(parents=True, exist_ok=True)
        (out / "awb").mkdir(parents=True, exist_ok=True)
    records, scenes = [], []
    for i in range(n_scenes):
        awb = mondrian_scene(rng, size, patch_grid, bias, achromatic_prob, gray_level)
        ell = sample_uip_illuminant(rng)
        raw = relight(LinearImage(awb, Domain.AWB), ell)
        fname = f"scene_{i:05d}.ccraw"
        if out is not None:
            write_ccraw(out / "raw" / fname, raw)
            write_ccraw(out / "awb" / fname, awb)
            path = str(out / "raw" / fname)
            rec = SampleRecord(path, ell, sensor_id)
        else:
            # float32 round trip so in-memory records match what a reader would see
            stored = LinearImage(raw.pixels.astype(np.float32).astype(np.float64), Domain.RAW)
            rec = SampleRecord.from_image(stored, ell, sensor_id)
            rec.image_path = f"<memory>/{fname}"
        records.append(rec)
        scenes.append(awb)
    manifest = Manifest(records, name=name, fold_count=3, root=out)
    if out is not None:
        manifest.save(out / "manifest.json")
    return manifest, scenes


# ---------------------------------------------------------------------- folds

def kfold_split(manifest, k: int = 3, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    n = len(manifest)
    if k < 2:
        raise InvalidInputError("k must be >= 2")
    if k > n:
        raise InvalidInputError(f"k={k} exceeds record count {n}")
    order = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(order, k)
    out = []
    for i in range(k):
        test = np.sort(folds[i])
        train = np.sort(np.concatenate([folds[j] for j in range(k) if j != i]))
        out.append((train, test))
    return out


def as_label_array(records: Sequence[SampleRecord]) -> np.ndarray:
    return np.stack([as_triple(r.label) for r in records])
