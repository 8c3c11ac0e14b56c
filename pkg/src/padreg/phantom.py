"""Synthetic force-paired test scenes with exact ground truth.

A scene holds a ground-truth stiffness map, a speckled rest image, and
vessel label masks.  Pairs are rendered by evaluating the engine's own
proportional deformation law on the true stiffness and backward-warping
the rest image, so recovery is a well-posed target: the solver's forward
model matches the generator exactly, and the generated field is the
unique proportional-law optimum.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field as dataclass_field
from typing import NamedTuple

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigError
from .fields import ScalarField, VectorField
from .force import DeltaForceVariant, ForcePair, delta_force
from .physics import DeformationModel, StiffnessMap, deformation_from_stiffness
from .warp import warp_bilinear, warp_nearest

LABEL_BACKGROUND = 0
LABEL_ARTERY = 1
LABEL_VEIN = 2

_INTENSITY = {LABEL_BACKGROUND: 0.5, LABEL_ARTERY: 0.15, LABEL_VEIN: 0.1}


@dataclass(frozen=True)
class Inclusion:
    """Disk-shaped region with its own stiffness scaling.

    stiffness_factor < 1 stiffens (artery-like), > 1 softens (vein-like).
    """

    center_row: float
    center_col: float
    radius: float
    stiffness_factor: float
    label: int

    def __post_init__(self):
        if self.radius <= 0.0:
            raise ConfigError(f"inclusion radius must be positive, got {self.radius!r}")
        if self.stiffness_factor <= 0.0:
            raise ConfigError(
                f"stiffness_factor must be positive, got {self.stiffness_factor!r}"
            )
        if self.label not in (LABEL_ARTERY, LABEL_VEIN):
            raise ConfigError(f"label must be 1 (artery) or 2 (vein), got {self.label!r}")


class SpeckleKind(enum.Enum):
    NONE = "none"
    MULTIPLICATIVE = "multiplicative"


@dataclass(frozen=True)
class SpeckleSpec:
    """Speckle noise choice: NONE, or MULTIPLICATIVE with log-normal sigma."""

    kind: SpeckleKind = SpeckleKind.NONE
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind is SpeckleKind.MULTIPLICATIVE and not (
            self.sigma > 0.0 and math.isfinite(self.sigma)
        ):
            raise ConfigError(f"multiplicative speckle needs sigma > 0, got {self.sigma!r}")

    @classmethod
    def none(cls) -> "SpeckleSpec":
        return cls(SpeckleKind.NONE, 0.0)

    @classmethod
    def multiplicative(cls, sigma: float) -> "SpeckleSpec":
        return cls(SpeckleKind.MULTIPLICATIVE, sigma)


@dataclass(frozen=True)
class PhantomConfig:
    height: int
    width: int
    inclusions: tuple[Inclusion, ...] = ()
    base_kx: float = 5.0
    depth_decay: float = 0.15
    ky_scale: float = 0.1
    speckle: SpeckleSpec = dataclass_field(default_factory=SpeckleSpec.none)
    blur_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.height < 2 or self.width < 2:
            raise ConfigError(f"scene must be at least 2x2, got {self.height}x{self.width}")
        if not (self.base_kx > 0.0 and math.isfinite(self.base_kx)):
            raise ConfigError(f"base_kx must be positive, got {self.base_kx!r}")
        if not (0.0 <= self.depth_decay <= 1.0):
            raise ConfigError(f"depth_decay must lie in [0, 1], got {self.depth_decay!r}")
        if not (self.ky_scale >= 0.0 and math.isfinite(self.ky_scale)):
            raise ConfigError(f"ky_scale must be non-negative, got {self.ky_scale!r}")
        if not (self.blur_sigma >= 0.0 and math.isfinite(self.blur_sigma)):
            raise ConfigError(f"blur_sigma must be non-negative, got {self.blur_sigma!r}")
        object.__setattr__(self, "inclusions", tuple(self.inclusions))
        for inc in self.inclusions:
            if not (
                inc.center_row - inc.radius >= 0
                and inc.center_row + inc.radius <= self.height - 1
                and inc.center_col - inc.radius >= 0
                and inc.center_col + inc.radius <= self.width - 1
            ):
                raise ConfigError(
                    f"inclusion at ({inc.center_row}, {inc.center_col}) r={inc.radius} "
                    f"does not fit inside {self.height}x{self.width}"
                )


@dataclass(frozen=True)
class PhantomScene:
    """Ground truth for one synthetic scene.

    masks holds labels 0 (background), 1 (artery), 2 (vein) as a float
    grid so it can be warped with the same machinery as images.
    """

    k_true: StiffnessMap
    rest_image: ScalarField
    masks: ScalarField


class RenderedPair(NamedTuple):
    moving: ScalarField
    target: ScalarField
    masks_moving: ScalarField
    masks_target: ScalarField
    d_true: VectorField
    df_true: float


def make_scene(cfg: PhantomConfig) -> PhantomScene:
    """Build a scene from its config; bitwise reproducible from the seed.

    kx(r, c) = base_kx * (1 - (1 - depth_decay) * r / (H - 1)) * factor(r, c),
    where factor is each inclusion's stiffness_factor inside its disk
    (later inclusions win on overlap) and 1 elsewhere.  ky flips sign at
    the column midline: tissue spreads sideways away from the probe axis,
    and the exact midline column (odd widths) stays put.
    """
    h, w = cfg.height, cfg.width
    rows = np.arange(h, dtype=np.float64)[:, None]
    cols = np.arange(w, dtype=np.float64)[None, :]

    depth_profile = 1.0 - (1.0 - cfg.depth_decay) * rows / (h - 1)
    factor = np.ones((h, w))
    labels = np.zeros((h, w))
    intensity = np.full((h, w), _INTENSITY[LABEL_BACKGROUND])
    for inc in cfg.inclusions:
        disk = (rows - inc.center_row) ** 2 + (cols - inc.center_col) ** 2 <= inc.radius**2
        factor[disk] = inc.stiffness_factor
        labels[disk] = float(inc.label)
        intensity[disk] = _INTENSITY[inc.label]

    kx = cfg.base_kx * depth_profile * factor
    lateral_sign = np.sign(cols - (w - 1) / 2.0)
    ky = cfg.ky_scale * kx * lateral_sign

    if cfg.blur_sigma > 0.0:
        intensity = gaussian_filter(intensity, cfg.blur_sigma)
    if cfg.speckle.kind is SpeckleKind.MULTIPLICATIVE:
        rng = np.random.default_rng(cfg.seed)
        gauss = rng.standard_normal((h, w))
        intensity = intensity * np.exp(cfg.speckle.sigma * gauss)
    intensity = np.clip(intensity, 0.0, 1.0)

    return PhantomScene(
        k_true=StiffnessMap(ScalarField(kx), ScalarField(ky)),
        rest_image=ScalarField(intensity),
        masks=ScalarField(labels),
    )


def render_pair(
    scene: PhantomScene,
    forces: ForcePair,
    variant: DeltaForceVariant = DeltaForceVariant.NORMALIZED,
) -> RenderedPair:
    """Render a force pair from a scene.

    The true field follows the proportional law on the true stiffness, the
    target image is the rest image backward-warped by that field, and the
    masks are warped with nearest-neighbour sampling so labels stay crisp.
    Identical forces give df_true = 0 and a target identical to the moving
    image.
    """
    df_true = delta_force(forces, variant)
    d_true = deformation_from_stiffness(scene.k_true, df_true, DeformationModel.proportional())
    moving = scene.rest_image
    target = warp_bilinear(moving, d_true)
    masks_target = warp_nearest(scene.masks, d_true)
    return RenderedPair(
        moving=moving,
        target=target,
        masks_moving=scene.masks,
        masks_target=masks_target,
        d_true=d_true,
        df_true=df_true,
    )
