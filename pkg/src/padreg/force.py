"""Contact-force differentials, sinusoidal force embeddings, and fusion.

The registration solver conditions the deformation model on a single scalar
summarizing the contact-force change between the two acquisitions.  Several
formulations of that scalar are provided; the normalized one is
dimensionless and invariant to rescaling both forces, which makes solver
behaviour independent of the force unit.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateForceError, DimensionMismatchError
from .fields import ScalarField


@dataclass(frozen=True)
class ForcePair:
    """Contact forces (newtons) for the moving and target images."""

    f_moving: float
    f_target: float

    def __post_init__(self):
        for name, value in (("f_moving", self.f_moving), ("f_target", self.f_target)):
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
            if value < 0.0:
                raise ValueError(f"{name} must be non-negative, got {value!r}")


class DeltaForceVariant(enum.Enum):
    """Formulations of the scalar force differential.

    NORMALIZED: sign(f_t - f_m) * sqrt(|f_t - f_m| / (f_t + f_m)), bounded
    in [-1, 1] and scale invariant.
    RAW: plain difference f_t - f_m in newtons.
    RATIO: (f_t - f_m) / (f_t + f_m), bounded and scale invariant but
    without the square-root compression.
    SIGNED_SQRT: sign(f_t - f_m) * sqrt(|f_t - f_m|), compresses large
    differences but keeps the force unit.
    """

    NORMALIZED = "normalized"
    RAW = "raw"
    RATIO = "ratio"
    SIGNED_SQRT = "signed_sqrt"


def delta_force(pair: ForcePair, variant: DeltaForceVariant = DeltaForceVariant.NORMALIZED) -> float:
    """Scalar force differential for an image pair.

    Parameters
    ----------
    pair : ForcePair
        Non-negative contact forces in newtons.
    variant : DeltaForceVariant
        Which formulation to evaluate.

    Returns
    -------
    float
        The differential; positive when the target was acquired under the
        larger force.  Identical forces give exactly 0 under every variant.

    Raises
    ------
    DegenerateForceError
        For NORMALIZED and RATIO when both forces are zero, since their
        common denominator f_moving + f_target vanishes.
    """
    fm, ft = pair.f_moving, pair.f_target
    diff = ft - fm
    sign = 0.0 if diff == 0.0 else math.copysign(1.0, diff)
    if variant is DeltaForceVariant.RAW:
        return diff
    if variant is DeltaForceVariant.SIGNED_SQRT:
        return sign * math.sqrt(abs(diff))
    total = ft + fm
    if total <= 0.0:
        raise DegenerateForceError(
            f"{variant.name} differential needs f_moving + f_target > 0, got {total!r}"
        )
    if variant is DeltaForceVariant.RATIO:
        return diff / total
    if variant is DeltaForceVariant.NORMALIZED:
        return sign * math.sqrt(abs(diff) / total)
    raise ValueError(f"unknown variant {variant!r}")


@dataclass(frozen=True)
class ForceEmbedding:
    """Sinusoidal embedding of one force (length d_model) or a pair (2*d_model)."""

    d_model: int
    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError(f"embedding must be a vector, got shape {arr.shape}")
        if arr.size not in (self.d_model, 2 * self.d_model):
            raise ValueError(
                f"embedding length {arr.size} is neither d_model={self.d_model} nor twice it"
            )
        if np.any(np.abs(arr) > 1.0 + 1e-15):
            raise ValueError("embedding components must lie in [-1, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)


def _check_d_model(d_model: int) -> None:
    if d_model < 2 or d_model % 2 != 0:
        raise ValueError(f"d_model must be a positive even integer >= 2, got {d_model!r}")


def force_embed(f: float, d_model: int) -> ForceEmbedding:
    """Sinusoidal embedding of a single force value.

    Component j of the sine half is sin(f / 1000^(2j/d_model)) for
    j in [0, d_model/2); the cosine half uses the same frequencies.  The
    output is the concatenation (sine half, cosine half).
    """
    _check_d_model(d_model)
    if not math.isfinite(f) or f < 0.0:
        raise ValueError(f"force must be finite and non-negative, got {f!r}")
    j = np.arange(d_model // 2, dtype=np.float64)
    # frequency schedule uses base 1000
    angles = f / np.power(1000.0, 2.0 * j / d_model)
    return ForceEmbedding(d_model, np.concatenate([np.sin(angles), np.cos(angles)]))


def force_pair_embed(pair: ForcePair, d_model: int) -> ForceEmbedding:
    """Joint embedding of a force pair: embed(f_moving) ++ embed(f_target)."""
    emb_m = force_embed(pair.f_moving, d_model)
    emb_t = force_embed(pair.f_target, d_model)
    return ForceEmbedding(d_model, np.concatenate([emb_m.values, emb_t.values]))


def project_embedding(emb: ForceEmbedding, out_dim: int, seed: int) -> np.ndarray:
    """Map an embedding through a seeded random linear projection.

    The matrix has orthonormal columns (QR of a seeded Gaussian draw), so
    the map is deterministic in (shapes, seed), linear, and well
    conditioned.  It plays the role of a fixed, untrained mixing layer.
    """
    if out_dim < 1:
        raise ValueError(f"out_dim must be >= 1, got {out_dim!r}")
    in_dim = emb.values.size
    rng = np.random.default_rng(seed)
    tall = rng.standard_normal((max(in_dim, out_dim), min(in_dim, out_dim)))
    q, _ = np.linalg.qr(tall)
    weights = q.T if in_dim >= out_dim else q
    return weights @ emb.values


def fuse_pointwise(features: list[ScalarField], emb: np.ndarray) -> list[ScalarField]:
    """Scale each feature channel by the matching embedding component.

    The embedding vector is broadcast spatially: channel k of the output is
    channel k of the input multiplied everywhere by emb[k].
    """
    vec = np.asarray(emb, dtype=np.float64).reshape(-1)
    if len(features) != vec.size:
        raise DimensionMismatchError(
            f"{len(features)} feature channels but embedding length {vec.size}"
        )
    return [ScalarField(ch.values * scale) for ch, scale in zip(features, vec)]
