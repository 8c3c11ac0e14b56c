"""Segmentation overlap, image similarity, and physics-consistency metrics.

All functions are pure and operate on the core field types. Overlap metrics
work on integer label masks (0 background, 1 artery, 2 vein); similarity
metrics on intensity fields in [0, 1]; discrepancy rate and endpoint error
score deformation fields directly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields as dataclass_fields
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.spatial import cKDTree

from .errors import DimensionMismatchError, DimensionTooSmallError
from .fields import ScalarField, VectorField
from .solver import loss_similarity

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
# Stability constants (0.01 L)^2 and (0.03 L)^2 with intensity range L = 1.
_SSIM_C1 = 0.01 ** 2
_SSIM_C2 = 0.03 ** 2

_VALID_LABELS = (0, 1, 2)


@dataclass(frozen=True)
class LabelMask:
    """Per-pixel segmentation labels; values restricted to {0, 1, 2}."""

    labels: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.labels)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("labels must be a non-empty 2-D array")
        if not np.all(np.isin(arr, _VALID_LABELS)):
            raise ValueError("labels must take values in {0, 1, 2}")
        data = arr.astype(np.int64)
        data.setflags(write=False)
        object.__setattr__(self, "labels", data)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @classmethod
    def from_field(cls, field: ScalarField) -> "LabelMask":
        """Convert a float-valued label image (as produced by the phantom)."""
        return cls(field.values)


@dataclass(frozen=True)
class MetricReport:
    """Flat bundle of evaluation metrics; absent entries stay None.

    `mi` is the standard non-negative mutual information and `dr` a fraction
    in [0, 1]; sign and percentage conventions are applied only where reports
    are rendered (CSV emits neg_mi and dr_percent).
    """

    dsc_artery: Optional[float] = None
    dsc_vein: Optional[float] = None
    hd95_artery: Optional[float] = None
    hd95_vein: Optional[float] = None
    ssim: Optional[float] = None
    mi: Optional[float] = None
    mse: Optional[float] = None
    dr: Optional[float] = None
    epe: Optional[float] = None

    def to_json(self) -> str:
        present = {}
        for f in dataclass_fields(self):
            value = getattr(self, f.name)
            if value is not None:
                present[f.name] = float(value)
        return json.dumps(present)


def _check_mask_dims(a: LabelMask, b: LabelMask) -> None:
    if a.labels.shape != b.labels.shape:
        raise DimensionMismatchError(
            f"mask shapes differ: {a.labels.shape} vs {b.labels.shape}")


def _check_field_dims(a: ScalarField, b: ScalarField) -> None:
    if a.values.shape != b.values.shape:
        raise DimensionMismatchError(
            f"field shapes differ: {a.values.shape} vs {b.values.shape}")


def dice(a: LabelMask, b: LabelMask, label: int) -> float:
    """Dice overlap 2|A∩B| / (|A|+|B|) for one label; 1.0 when both empty."""
    _check_mask_dims(a, b)
    in_a = a.labels == label
    in_b = b.labels == label
    total = int(in_a.sum()) + int(in_b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((in_a & in_b).sum()) / total


def _boundary_points(region: np.ndarray) -> np.ndarray:
    # 4-connectivity; padding with False makes image-edge pixels boundary.
    pad = np.pad(region, 1, constant_values=False)
    interior = (pad[:-2, 1:-1] & pad[2:, 1:-1]
                & pad[1:-1, :-2] & pad[1:-1, 2:])
    return np.argwhere(region & ~interior).astype(float)


def hd95(a: LabelMask, b: LabelMask, label: int) -> float:
    """95th percentile of symmetric boundary-to-boundary distances.

    Boundary pixels are label pixels with a non-label 4-neighbor or on the
    image edge. Directed nearest-boundary distances are computed both ways
    and the percentile (linear interpolation) is taken over their
    concatenation. Both masks empty gives 0; exactly one empty gives +inf.
    """
    _check_mask_dims(a, b)
    in_a = a.labels == label
    in_b = b.labels == label
    if not in_a.any() and not in_b.any():
        return 0.0
    if in_a.any() != in_b.any():
        return math.inf
    pa = _boundary_points(in_a)
    pb = _boundary_points(in_b)
    d_ab = cKDTree(pb).query(pa)[0]
    d_ba = cKDTree(pa).query(pb)[0]
    return float(np.percentile(np.concatenate([d_ab, d_ba]), 95))


def _check_intensity(field: ScalarField, name: str) -> None:
    if field.values.min() < 0.0 or field.values.max() > 1.0:
        raise ValueError(f"{name} intensities must lie in [0, 1]")


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size, dtype=float) - (size - 1) / 2.0
    g = np.exp(-0.5 * (ax / sigma) ** 2)
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a: ScalarField, b: ScalarField) -> float:
    """Mean local structural similarity over 11x11 Gaussian windows."""
    _check_field_dims(a, b)
    if a.height < _SSIM_WINDOW or a.width < _SSIM_WINDOW:
        raise DimensionTooSmallError(
            f"ssim needs at least {_SSIM_WINDOW}x{_SSIM_WINDOW} images, "
            f"got {a.height}x{a.width}")
    _check_intensity(a, "first image")
    _check_intensity(b, "second image")
    w = _gaussian_window(_SSIM_WINDOW, _SSIM_SIGMA)
    x = a.values
    y = b.values

    def wmean(img: np.ndarray) -> np.ndarray:
        win = sliding_window_view(img, (_SSIM_WINDOW, _SSIM_WINDOW))
        return np.tensordot(win, w, axes=([2, 3], [0, 1]))

    mx = wmean(x)
    my = wmean(y)
    var_x = wmean(x * x) - mx * mx
    var_y = wmean(y * y) - my * my
    cov = wmean(x * y) - mx * my
    # Variances are never clamped: identical inputs then give exactly 1.
    num = (2.0 * mx * my + _SSIM_C1) * (2.0 * cov + _SSIM_C2)
    den = (mx * mx + my * my + _SSIM_C1) * (var_x + var_y + _SSIM_C2)
    return float(np.mean(num / den))


def mutual_information(a: ScalarField, b: ScalarField, bins: int = 32) -> float:
    """Histogram mutual information in bits; equal-width bins over [0, 1]."""
    _check_field_dims(a, b)
    if bins < 2:
        raise ValueError("bins must be at least 2")
    _check_intensity(a, "first image")
    _check_intensity(b, "second image")
    counts, _, _ = np.histogram2d(a.values.ravel(), b.values.ravel(),
                                  bins=bins, range=((0.0, 1.0), (0.0, 1.0)))
    p = counts / counts.sum()
    px = p.sum(axis=1)
    py = p.sum(axis=0)
    nz = p > 0.0
    indep = np.outer(px, py)
    value = float(np.sum(p[nz] * (np.log2(p[nz]) - np.log2(indep[nz]))))
    return max(value, 0.0)


def mse(a: ScalarField, b: ScalarField) -> float:
    """Mean squared intensity error; same contract as the solver data term."""
    return loss_similarity(a, b)


def discrepancy_rate(dx: ScalarField, df: float) -> float:
    """Fraction of pixels whose vertical displacement contradicts sign(df).

    Counts strict sign contradictions dx*df < 0; with df = 0 there is no
    direction to contradict and the rate is 0.
    """
    if not math.isfinite(df):
        raise ValueError("df must be finite")
    if df == 0.0:
        return 0.0
    return float(np.mean(dx.values * df < 0.0))


def endpoint_error(d: VectorField, d_true: VectorField) -> float:
    """Mean Euclidean distance between displacement fields."""
    if d.dx.values.shape != d_true.dx.values.shape:
        raise DimensionMismatchError(
            f"field shapes differ: {d.dx.values.shape} vs "
            f"{d_true.dx.values.shape}")
    return float(np.mean(np.hypot(d.dx.values - d_true.dx.values,
                                  d.dy.values - d_true.dy.values)))
