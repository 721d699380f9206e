"""Angular-error statistics, statistics-based baseline estimators, and evaluation reports.

Quartiles for the trimean are Tukey hinges: the medians of the lower and upper
halves, with the overall median left out of both halves when n is odd.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .color import LinearImage, angular_error, as_triple, normalize
from .dataio import Manifest, SampleRecord, kfold_split
from .errors import InvalidInputError
from .network import CascadeModel
from .training import model_batch_input, predict

QUARTILE_METHOD = "tukey-hinges"


@dataclass
class MetricsReport:
    mean: float
    median: float
    trimean: float
    best25: float
    worst25: float
    n: int
    per_image: list[tuple[str, float]] = field(default_factory=list)

    def to_json(self, method: str = "", dataset: str = "", fold="all") -> dict:
        r4 = lambda v: round(float(v), 4)  # noqa: E731
        return {"method": method, "dataset": dataset, "fold": fold, "n": self.n,
                "quartile_method": QUARTILE_METHOD,
                "mean": r4(self.mean), "median": r4(self.median), "trimean": r4(self.trimean),
                "best25": r4(self.best25), "worst25": r4(self.worst25),
                "per_image": [[name, r4(err)] for name, err in self.per_image]}


def _median_sorted(v: Sequence[float]) -> float:
    n = len(v)
    mid = n // 2
    return float(v[mid]) if n % 2 else (float(v[mid - 1]) + float(v[mid])) / 2.0


def compute_stats(errors, ids: Sequence[str] | None = None) -> MetricsReport:
    e = np.asarray(errors, dtype=np.float64).ravel()
    if e.size == 0:
        raise InvalidInputError("no errors to summarize")
    if not np.all(np.isfinite(e)) or np.any(e < 0):
        raise InvalidInputError("errors must be finite and non-negative")
    s = np.sort(e)
    n = s.size
    med = _median_sorted(s)
    if n == 1:
        q1 = q3 = med
    else:
        half = n // 2
        q1 = _median_sorted(s[:half])
        q3 = _median_sorted(s[n - half:])
    k = max(1, n // 4)
    # correctly rounded means, so the result does not depend on summation order
    names = list(ids) if ids is not None else [str(i) for i in range(n)]
    return MetricsReport(mean=math.fsum(e.tolist()) / n, median=med, trimean=(q1 + 2.0 * med + q3) / 4.0,
                         best25=math.fsum(s[:k].tolist()) / k, worst25=math.fsum(s[n - k:].tolist()) / k, n=n,
                         per_image=list(zip(names, e.tolist())))


# ---------------------------------------------------------------- baselines

def _valid_pixels(image: LinearImage) -> np.ndarray:
    valid = image.valid()
    if not valid.any():
        raise InvalidInputError("image has no unmasked pixels")
    return image.pixels[valid]


def _direction(v: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(v)) or np.linalg.norm(v) <= 1e-300:
        return normalize(np.ones(3))
    return normalize(v)


def gray_world(image: LinearImage) -> np.ndarray:
    return _direction(_valid_pixels(image).mean(axis=0))


def white_patch(image: LinearImage, robust: bool = False) -> np.ndarray:
    px = _valid_pixels(image)
    return _direction(np.percentile(px, 99, axis=0) if robust else px.max(axis=0))


def _minkowski(values: np.ndarray, p: float) -> np.ndarray:
    # scale out the max first so high powers stay finite
    top = values.max(axis=0)
    top = np.where(top > 0, top, 1.0)
    return top * np.mean((values / top) ** p, axis=0) ** (1.0 / p)


def shades_of_gray(image: LinearImage, p: float = 6.0) -> np.ndarray:
    return _direction(_minkowski(_valid_pixels(image), p))


def gray_edge1(image: LinearImage, p: float = 6.0, sigma: float = 1.0) -> np.ndarray:
    """Minkowski p-norm of the first-order gradient magnitude after Gaussian smoothing.

    A scene with no edges at all yields the neutral direction.
    """
    valid = image.valid()
    if not valid.any():
        raise InvalidInputError("image has no unmasked pixels")
    mags = np.empty(image.pixels.shape)
    for c in range(3):
        smooth = ndimage.gaussian_filter(image.pixels[..., c], sigma, mode="nearest")
        gy, gx = np.gradient(smooth)
        mags[..., c] = np.hypot(gx, gy)
    return _direction(_minkowski(mags[valid], p))


BASELINES: dict[str, Callable[[LinearImage], np.ndarray]] = {
    "grayworld": gray_world,
    "whitepatch": white_patch,
    "sog": shades_of_gray,
    "grayedge": gray_edge1,
}


# --------------------------------------------------------------- estimators

class Estimator:
    name = "estimator"

    def __call__(self, image: LinearImage, record: SampleRecord) -> np.ndarray:
        raise NotImplementedError

    def estimate_many(self, images, records) -> list[np.ndarray]:
        return [self(im, rec) for im, rec in zip(images, records)]


class BaselineEstimator(Estimator):
    def __init__(self, name: str, **kwargs):
        if name not in BASELINES:
            raise InvalidInputError(f"unknown baseline {name!r}; expected one of {sorted(BASELINES)}")
        self.name = name
        self._fn = BASELINES[name]
        self._kwargs = kwargs

    def __call__(self, image, record):
        return self._fn(image, **self._kwargs)


class OracleEstimator(Estimator):
    name = "oracle"

    def __call__(self, image, record):
        return as_triple(record.label)


class ConstantEstimator(Estimator):
    def __init__(self, triple=(1.0, 1.0, 1.0)):
        self.name = "constant"
        self._v = normalize(triple)

    def __call__(self, image, record):
        return self._v.copy()


class ModelEstimator(Estimator):
    """Final-stage cascade estimate on the gamma-encoded, optionally half-size image."""

    name = "model"

    def __init__(self, model: CascadeModel, resize_half: bool = False):
        self.model = model
        self.resize_half = resize_half

    def __call__(self, image, record):
        return predict(self.model, model_batch_input([image], self.resize_half))[-1][0]

    def estimate_many(self, images, records):
        shapes = {im.pixels.shape for im in images}
        if len(shapes) == 1 and images:
            out = []
            for start in range(0, len(images), 32):
                out.extend(predict(self.model, model_batch_input(images[start:start + 32], self.resize_half))[-1])
            return out
        return super().estimate_many(images, records)


def _record_id(record: SampleRecord, index: int) -> str:
    stem = Path(record.image_path).stem
    return stem if stem and not stem.startswith("<") else str(index)


def evaluate(estimator: Estimator, manifest: Manifest, fold: int | None = None, k: int | None = None,
             seed: int = 0, workers: int = 1) -> MetricsReport:
    """Errors of ``estimator`` on the test split of ``fold`` (all records when ``fold`` is None)."""
    if fold is None:
        indices = np.arange(len(manifest))
    else:
        folds = kfold_split(manifest, k or manifest.fold_count, seed)
        if not 0 <= fold < len(folds):
            raise InvalidInputError(f"fold {fold} out of range for {len(folds)} folds")
        indices = folds[fold][1]
    records = [manifest.records[i] for i in indices]
    images = [r.load() for r in records]
    if workers > 1 and not isinstance(estimator, ModelEstimator):
        with ThreadPoolExecutor(workers) as pool:
            estimates = list(pool.map(estimator, images, records))
    else:
        estimates = estimator.estimate_many(images, records)
    errors = [angular_error(est, rec.label) for est, rec in zip(estimates, records)]
    return compute_stats(errors, [_record_id(r, int(i)) for r, i in zip(records, indices)])


def evaluate_folds(estimator: Estimator, manifest: Manifest, k: int = 3, seed: int = 0,
                   workers: int = 1) -> MetricsReport:
    """Concatenate the test-fold errors of all k folds into one report."""
    per: list[tuple[str, float]] = []
    for f in range(k):
        per.extend(evaluate(estimator, manifest, f, k, seed, workers).per_image)
    names, errs = zip(*per)
    return compute_stats(errs, names)


def write_report(path, report: MetricsReport, method: str, dataset: str, fold="all") -> dict:
    doc = report.to_json(method, dataset, fold)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")
    return doc


def mean_error(errors) -> float:
    return float(np.mean(errors)) if len(errors) else math.nan
