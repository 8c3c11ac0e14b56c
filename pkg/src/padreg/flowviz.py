"""Color-wheel rendering of deformation fields.

Direction maps to hue and magnitude to saturation on an HSV wheel at full
value, so zero displacement renders white and the hue angle is continuous.
Hue 0 corresponds to positive dx (toward the image top under the physics
axis convention); rotating every vector by pi shifts hues by 180 degrees.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .fields import VectorField


@dataclass(frozen=True)
class RgbImage:
    """Byte image with shape (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.pixels)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError("pixels must have shape (height, width, 3)")
        data = arr.astype(np.uint8)
        data.setflags(write=False)
        object.__setattr__(self, "pixels", data)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def _hsv_bytes(hue: np.ndarray, sat: np.ndarray) -> np.ndarray:
    # HSV -> RGB at value 1: channels interpolate between 1 and 1 - sat.
    h6 = (hue % 1.0) * 6.0
    sector = np.floor(h6).astype(np.int64) % 6
    frac = h6 - np.floor(h6)
    p = 1.0 - sat
    q = 1.0 - sat * frac
    t = 1.0 - sat * (1.0 - frac)
    one = np.ones_like(sat)
    r = np.choose(sector, [one, q, p, p, t, one])
    g = np.choose(sector, [t, one, one, q, p, p])
    b = np.choose(sector, [p, p, t, one, one, q])
    rgb = np.stack([r, g, b], axis=-1)
    return np.rint(rgb * 255.0).astype(np.uint8)


def flow_to_color(d: VectorField, max_mag: Optional[float] = None) -> RgbImage:
    """Render a deformation field on the HSV color wheel.

    Saturation is min(|d| / max_mag, 1); max_mag defaults to the field's
    maximum magnitude (or 1 for an all-zero field). Scaling the field and
    max_mag together leaves the output unchanged.
    """
    dx = d.dx.values
    dy = d.dy.values
    mag = np.hypot(dx, dy)
    if max_mag is None:
        peak = float(mag.max())
        max_mag = peak if peak > 0.0 else 1.0
    if not max_mag > 0.0:
        raise ValueError("max_mag must be positive")
    hue = np.arctan2(dy, dx) / (2.0 * np.pi)
    sat = np.minimum(mag / max_mag, 1.0)
    return RgbImage(_hsv_bytes(hue, sat))
