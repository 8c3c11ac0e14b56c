"""Deformation models mapping a stiffness map and a force differential to
a displacement field.

The core assumption is Hookean: under a fixed probe contact area, local
displacement is proportional to the force change scaled by the inverse of
local stiffness.  The per-pixel proportionality constants form the
stiffness map K = (kx, ky), expressed directly in pixels per unit force
differential.  Alternative models add shared scalar terms (LINEAR,
QUADRATIC) or bypass the force differential entirely (DIRECT), which is
the ablation baseline the physics-aware modes are compared against.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError
from .fields import ScalarField, VectorField


@dataclass(frozen=True)
class StiffnessMap:
    """Per-pixel displacement response (pixels per unit force differential).

    Values are sign-unconstrained: a recovered map may contain negative
    entries, and the discrepancy-rate metric quantifies how often that
    contradicts the applied force direction.
    """

    kx: ScalarField
    ky: ScalarField

    def __post_init__(self):
        if self.kx.values.shape != self.ky.values.shape:
            raise DimensionMismatchError(
                f"kx shape {self.kx.values.shape} != ky shape {self.ky.values.shape}"
            )

    @property
    def height(self) -> int:
        return self.kx.height

    @property
    def width(self) -> int:
        return self.kx.width

    @classmethod
    def zeros(cls, height: int, width: int) -> "StiffnessMap":
        return cls(ScalarField.zeros(height, width), ScalarField.zeros(height, width))


class ModelTag(enum.Enum):
    PROPORTIONAL = "proportional"
    LINEAR = "linear"
    QUADRATIC = "quadratic"
    DIRECT = "direct"


@dataclass(frozen=True)
class DeformationModel:
    """Deformation law selector plus its shared scalar parameters.

    PROPORTIONAL: D = K * df.
    LINEAR:       D = (beta * K + alpha) * df.
    QUADRATIC:    D = (gamma * K^2 + beta * K + alpha) * df.
    DIRECT:       D = K, ignoring df.

    The scalar parameters are shared across all pixels, one set per axis.
    Defaults (alpha=0, beta=1, gamma=0) make LINEAR and QUADRATIC collapse
    to PROPORTIONAL, which is the identity initialization the solver uses.
    """

    tag: ModelTag = ModelTag.PROPORTIONAL
    alpha_x: float = 0.0
    alpha_y: float = 0.0
    beta_x: float = 1.0
    beta_y: float = 1.0
    gamma_x: float = 0.0
    gamma_y: float = 0.0

    def __post_init__(self):
        for name in ("alpha_x", "alpha_y", "beta_x", "beta_y", "gamma_x", "gamma_y"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @classmethod
    def proportional(cls) -> "DeformationModel":
        return cls(ModelTag.PROPORTIONAL)

    @classmethod
    def linear(cls, alpha_x=0.0, alpha_y=0.0, beta_x=1.0, beta_y=1.0) -> "DeformationModel":
        return cls(ModelTag.LINEAR, alpha_x=alpha_x, alpha_y=alpha_y, beta_x=beta_x, beta_y=beta_y)

    @classmethod
    def quadratic(
        cls, alpha_x=0.0, alpha_y=0.0, beta_x=1.0, beta_y=1.0, gamma_x=0.0, gamma_y=0.0
    ) -> "DeformationModel":
        return cls(
            ModelTag.QUADRATIC,
            alpha_x=alpha_x,
            alpha_y=alpha_y,
            beta_x=beta_x,
            beta_y=beta_y,
            gamma_x=gamma_x,
            gamma_y=gamma_y,
        )

    @classmethod
    def direct(cls) -> "DeformationModel":
        return cls(ModelTag.DIRECT)


def deformation_from_stiffness(k: StiffnessMap, df: float, model: DeformationModel) -> VectorField:
    """Evaluate the selected deformation law.

    Parameters
    ----------
    k : StiffnessMap
        Per-pixel response map.
    df : float
        Scalar force differential; ignored by DIRECT.
    model : DeformationModel
        Law selector and its scalar parameters.

    Returns
    -------
    VectorField
        Dense displacement in pixels.
    """
    if not math.isfinite(df):
        raise ValueError(f"df must be finite, got {df!r}")
    kx, ky = k.kx.values, k.ky.values
    tag = model.tag
    if tag is ModelTag.PROPORTIONAL:
        dx = kx * df
        dy = ky * df
    elif tag is ModelTag.LINEAR:
        dx = (model.beta_x * kx + model.alpha_x) * df
        dy = (model.beta_y * ky + model.alpha_y) * df
    elif tag is ModelTag.QUADRATIC:
        dx = (model.gamma_x * kx * kx + model.beta_x * kx + model.alpha_x) * df
        dy = (model.gamma_y * ky * ky + model.beta_y * ky + model.alpha_y) * df
    elif tag is ModelTag.DIRECT:
        dx = kx.copy()
        dy = ky.copy()
    else:
        raise ValueError(f"unknown model tag {tag!r}")
    return VectorField(ScalarField(dx), ScalarField(dy))


def deformation_grad_stiffness(
    k: StiffnessMap, df: float, model: DeformationModel
) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise derivatives (dDx/dkx, dDy/dky) of the deformation law.

    The laws are separable per axis and per pixel, so the Jacobian is
    diagonal and these two arrays carry it completely.
    """
    kx, ky = k.kx.values, k.ky.values
    tag = model.tag
    if tag is ModelTag.PROPORTIONAL:
        gx = np.full_like(kx, df)
        gy = np.full_like(ky, df)
    elif tag is ModelTag.LINEAR:
        gx = np.full_like(kx, model.beta_x * df)
        gy = np.full_like(ky, model.beta_y * df)
    elif tag is ModelTag.QUADRATIC:
        gx = (2.0 * model.gamma_x * kx + model.beta_x) * df
        gy = (2.0 * model.gamma_y * ky + model.beta_y) * df
    elif tag is ModelTag.DIRECT:
        gx = np.ones_like(kx)
        gy = np.ones_like(ky)
    else:
        raise ValueError(f"unknown model tag {tag!r}")
    return gx, gy
