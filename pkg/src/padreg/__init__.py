"""Physics-aware deformable registration for force-paired image sequences.

Estimates a pixel-wise stiffness map and a contact-force-constrained
deformation field between two images acquired under different probe
contact forces, and ships a synthetic phantom generator plus a full
evaluation harness.
"""

from .errors import (
    ConfigError,
    DegenerateForceError,
    DimensionMismatchError,
    DimensionTooSmallError,
    PadregError,
    SolverDivergedError,
)
from .fields import (
    GridPoint,
    ScalarField,
    VectorField,
    downsample2,
    forward_diff,
    upsample2,
)
from .force import (
    DeltaForceVariant,
    ForceEmbedding,
    ForcePair,
    delta_force,
    force_embed,
    force_pair_embed,
    fuse_pointwise,
    project_embedding,
)
from .warp import BoundaryMode, WarpConfig, warp_adjoint, warp_bilinear, warp_nearest
from .physics import (
    DeformationModel,
    ModelTag,
    StiffnessMap,
    deformation_from_stiffness,
    deformation_grad_stiffness,
)
from .solver import (
    LossEntry,
    RegistrationResult,
    SolverConfig,
    loss_similarity,
    loss_smoothness,
    objective_with_grad,
    register_pair,
)
from .phantom import (
    LABEL_ARTERY,
    LABEL_BACKGROUND,
    LABEL_VEIN,
    Inclusion,
    PhantomConfig,
    PhantomScene,
    RenderedPair,
    SpeckleKind,
    SpeckleSpec,
    make_scene,
    render_pair,
)
from .metrics import (
    LabelMask,
    MetricReport,
    dice,
    discrepancy_rate,
    endpoint_error,
    hd95,
    mse,
    mutual_information,
    ssim,
)
from .flowviz import RgbImage, flow_to_color

__version__ = "0.1.0"

__all__ = [
    "BoundaryMode",
    "ConfigError",
    "DegenerateForceError",
    "DeformationModel",
    "DeltaForceVariant",
    "DimensionMismatchError",
    "DimensionTooSmallError",
    "ForceEmbedding",
    "ForcePair",
    "GridPoint",
    "Inclusion",
    "LABEL_ARTERY",
    "LABEL_BACKGROUND",
    "LABEL_VEIN",
    "LabelMask",
    "LossEntry",
    "MetricReport",
    "ModelTag",
    "PadregError",
    "PhantomConfig",
    "PhantomScene",
    "RegistrationResult",
    "RenderedPair",
    "RgbImage",
    "ScalarField",
    "SolverConfig",
    "SolverDivergedError",
    "SpeckleKind",
    "SpeckleSpec",
    "StiffnessMap",
    "VectorField",
    "WarpConfig",
    "delta_force",
    "deformation_from_stiffness",
    "deformation_grad_stiffness",
    "dice",
    "discrepancy_rate",
    "downsample2",
    "endpoint_error",
    "flow_to_color",
    "force_embed",
    "force_pair_embed",
    "forward_diff",
    "fuse_pointwise",
    "hd95",
    "loss_similarity",
    "loss_smoothness",
    "make_scene",
    "mse",
    "mutual_information",
    "objective_with_grad",
    "project_embedding",
    "register_pair",
    "render_pair",
    "ssim",
    "upsample2",
    "warp_adjoint",
    "warp_bilinear",
    "warp_nearest",
]
