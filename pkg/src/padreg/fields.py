"""Dense 2-D field containers, resampling, and finite-difference primitives.

Coordinate convention used throughout the package: the row index increases
with imaging depth (away from the probe), the column index increases to the
right.  A positive vertical displacement means tissue motion toward the
probe, i.e. toward smaller row indices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, DimensionTooSmallError


@dataclass(frozen=True)
class ScalarField:
    """Immutable H x W grid of finite real values.

    Stores image intensities in [0, 1], one stiffness component, or one
    displacement component in pixels.  The backing array is float64,
    row-major, and marked read-only so instances can be shared freely
    across workers.
    """

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64, order="C")
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionMismatchError(f"expected a 2-D grid, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("field contains NaN or Inf values")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def data(self) -> np.ndarray:
        """Row-major flattened view of the pixel values."""
        return self.values.reshape(-1)

    @classmethod
    def full(cls, height: int, width: int, value: float) -> "ScalarField":
        return cls(np.full((height, width), value, dtype=np.float64))

    @classmethod
    def zeros(cls, height: int, width: int) -> "ScalarField":
        return cls.full(height, width, 0.0)


@dataclass(frozen=True)
class VectorField:
    """Dense displacement field in pixels.

    ``dx`` is the vertical component (positive = toward the probe, i.e.
    decreasing row index); ``dy`` is the horizontal component (positive =
    increasing column index).
    """

    dx: ScalarField
    dy: ScalarField

    def __post_init__(self):
        if self.dx.values.shape != self.dy.values.shape:
            raise DimensionMismatchError(
                f"dx shape {self.dx.values.shape} != dy shape {self.dy.values.shape}"
            )

    @property
    def height(self) -> int:
        return self.dx.height

    @property
    def width(self) -> int:
        return self.dx.width

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.dx.values, self.dy.values)

    @classmethod
    def zeros(cls, height: int, width: int) -> "VectorField":
        return cls(ScalarField.zeros(height, width), ScalarField.zeros(height, width))


@dataclass(frozen=True)
class GridPoint:
    """A (row, col) location in pixel units; may be fractional."""

    row: float
    col: float

    def __post_init__(self):
        if not (np.isfinite(self.row) and np.isfinite(self.col)):
            raise ValueError("grid point coordinates must be finite")


def _require_min_dims(values: np.ndarray, min_h: int, min_w: int, op: str) -> None:
    h, w = values.shape
    if h < min_h or w < min_w:
        raise DimensionTooSmallError(f"{op} requires at least {min_h}x{min_w}, got {h}x{w}")


def downsample2(field: ScalarField) -> ScalarField:
    """Halve both dimensions by averaging 2x2 blocks.

    Output dimensions are ceil(H/2) x ceil(W/2); blocks at the bottom/right
    edge of odd-sized grids are truncated and averaged over the pixels they
    actually cover.
    """
    v = field.values
    _require_min_dims(v, 2, 2, "downsample2")
    h, w = v.shape
    row_starts = np.arange(0, h, 2)
    col_starts = np.arange(0, w, 2)
    sums = np.add.reduceat(np.add.reduceat(v, row_starts, axis=0), col_starts, axis=1)
    row_counts = np.minimum(row_starts + 2, h) - row_starts
    col_counts = np.minimum(col_starts + 2, w) - col_starts
    counts = row_counts[:, None] * col_counts[None, :]
    return ScalarField(sums / counts)


def _axis_lerp(values: np.ndarray, target: int, axis: int) -> np.ndarray:
    n = values.shape[axis]
    if n == 1:
        reps = [1, 1]
        reps[axis] = target
        return np.tile(values, reps)
    if target == 1:
        # Degenerate target keeps the first sample (corner-aligned).
        return np.take(values, [0], axis=axis)
    pos = np.arange(target, dtype=np.float64) * (n - 1) / (target - 1)
    lo = np.floor(pos).astype(np.intp)
    lo = np.minimum(lo, n - 1)
    hi = np.minimum(lo + 1, n - 1)
    frac = pos - lo
    v_lo = np.take(values, lo, axis=axis)
    v_hi = np.take(values, hi, axis=axis)
    shape = [1, 1]
    shape[axis] = target
    frac = frac.reshape(shape)
    # a + t*(b - a) keeps constants bit-exact.
    return v_lo + frac * (v_hi - v_lo)


def upsample2(field: ScalarField, target_h: int, target_w: int) -> ScalarField:
    """Bilinearly interpolate onto a roughly doubled grid.

    Each target dimension must lie in [2*dim - 1, 2*dim].  The mapping is
    corner-aligned, so values at the four corners are reproduced exactly.
    """
    v = field.values
    h, w = v.shape
    if not (2 * h - 1 <= target_h <= 2 * h) or not (2 * w - 1 <= target_w <= 2 * w):
        raise DimensionMismatchError(
            f"target {target_h}x{target_w} is not a 2x refinement of {h}x{w}"
        )
    out = _axis_lerp(v, target_h, axis=0)
    out = _axis_lerp(out, target_w, axis=1)
    return ScalarField(out)


def forward_diff(field: ScalarField) -> tuple[ScalarField, ScalarField]:
    """Forward differences along rows and columns.

    Returns (row-direction difference, column-direction difference).  The
    difference at the last row/column is 0, which matches replicate padding
    and keeps downstream penalties from referencing out-of-grid samples.
    """
    v = field.values
    _require_min_dims(v, 2, 2, "forward_diff")
    dr = np.zeros_like(v)
    dc = np.zeros_like(v)
    dr[:-1, :] = v[1:, :] - v[:-1, :]
    dc[:, :-1] = v[:, 1:] - v[:, :-1]
    return ScalarField(dr), ScalarField(dc)
