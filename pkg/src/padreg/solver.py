"""Per-pair variational registration solver.

Given a moving/target image pair and their contact forces, the solver
optimizes a pixel-wise stiffness map (plus the deformation model's scalar
parameters, when it has any) so that warping the moving image by the
physics-derived field minimizes

    total = L_sim(warp(moving, D), target) + lambda_reg * L_reg(D),

where D = deformation_from_stiffness(K, df, model).  Optimization is
coarse-to-fine over an image pyramid with adaptive-moment gradient descent
at each level, followed by a monotone acceptance rule: the returned state
is the best full-resolution iterate encountered, including the zero
initialization, so the final total loss never exceeds the initial one.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dataclass_field, replace
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DimensionMismatchError, SolverDivergedError
from .fields import ScalarField, VectorField, downsample2, forward_diff, upsample2
from .force import DeltaForceVariant, ForcePair, delta_force
from .physics import (
    DeformationModel,
    ModelTag,
    StiffnessMap,
    deformation_from_stiffness,
    deformation_grad_stiffness,
)
from .warp import warp_adjoint, warp_bilinear

_PARAM_STEP_SCALE = 0.1  # scalar model params move slower than the field
_STOP_WINDOW = 10
_MIN_COARSE_DIM = 8


class LossEntry(NamedTuple):
    iteration: int
    l_sim: float
    l_reg: float
    total: float


@dataclass(frozen=True)
class SolverConfig:
    """Solver hyper-parameters; defaults suit 64 to 256 px images."""

    levels: int = 3
    iters_per_level: int = 300
    step_size: float = 0.05
    moment1: float = 0.9
    moment2: float = 0.999
    eps: float = 1e-8
    lambda_reg: float = 0.03
    df_variant: DeltaForceVariant = DeltaForceVariant.NORMALIZED
    model: DeformationModel = dataclass_field(default_factory=DeformationModel.proportional)
    stop_rel_tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.levels, int) or self.levels < 1:
            raise ConfigError(f"levels must be a positive integer, got {self.levels!r}")
        if not isinstance(self.iters_per_level, int) or self.iters_per_level < 1:
            raise ConfigError(f"iters_per_level must be a positive integer, got {self.iters_per_level!r}")
        if not (self.step_size > 0.0 and math.isfinite(self.step_size)):
            raise ConfigError(f"step_size must be positive, got {self.step_size!r}")
        for name in ("moment1", "moment2"):
            v = getattr(self, name)
            if not (0.0 <= v < 1.0):
                raise ConfigError(f"{name} must lie in [0, 1), got {v!r}")
        if not (self.eps > 0.0 and math.isfinite(self.eps)):
            raise ConfigError(f"eps must be a small positive real, got {self.eps!r}")
        if not (self.lambda_reg >= 0.0 and math.isfinite(self.lambda_reg)):
            raise ConfigError(f"lambda_reg must be non-negative, got {self.lambda_reg!r}")
        if not (self.stop_rel_tol >= 0.0 and math.isfinite(self.stop_rel_tol)):
            raise ConfigError(f"stop_rel_tol must be non-negative, got {self.stop_rel_tol!r}")
        if not isinstance(self.df_variant, DeltaForceVariant):
            raise ConfigError(f"df_variant must be a DeltaForceVariant, got {self.df_variant!r}")
        if not isinstance(self.model, DeformationModel):
            raise ConfigError(f"model must be a DeformationModel, got {self.model!r}")
        if not isinstance(self.seed, int):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")

    @classmethod
    def from_json(cls, text: str) -> "SolverConfig":
        """Parse a config from a JSON document.

        Accepts exactly the dataclass field names; unknown keys are
        rejected.  df_variant is the variant name (case-insensitive);
        model is either a tag name or an object with "tag" and optional
        scalar parameters.
        """
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(doc)
        if "df_variant" in kwargs:
            kwargs["df_variant"] = _parse_variant(kwargs["df_variant"])
        if "model" in kwargs:
            kwargs["model"] = _parse_model(kwargs["model"])
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def _parse_variant(value) -> DeltaForceVariant:
    if isinstance(value, DeltaForceVariant):
        return value
    if isinstance(value, str):
        key = value.strip().lower()
        for variant in DeltaForceVariant:
            if key in (variant.name.lower(), variant.value):
                return variant
    raise ConfigError(f"unknown df_variant {value!r}")


def _parse_model(value) -> DeformationModel:
    if isinstance(value, DeformationModel):
        return value
    if isinstance(value, str):
        return DeformationModel(_parse_model_tag(value))
    if isinstance(value, dict):
        known = {"tag", "alpha_x", "alpha_y", "beta_x", "beta_y", "gamma_x", "gamma_y"}
        unknown = set(value) - known
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")
        if "tag" not in value:
            raise ConfigError("model object needs a 'tag' entry")
        kwargs = dict(value)
        tag = _parse_model_tag(kwargs.pop("tag"))
        try:
            return DeformationModel(tag, **kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
    raise ConfigError(f"cannot parse model from {value!r}")


def _parse_model_tag(value) -> ModelTag:
    if isinstance(value, str):
        key = value.strip().lower()
        for tag in ModelTag:
            if key in (tag.name.lower(), tag.value):
                return tag
    raise ConfigError(f"unknown model tag {value!r}")


@dataclass(frozen=True)
class RegistrationResult:
    """Solver output for one image pair.

    ``field`` equals deformation_from_stiffness(stiffness, df_value, model)
    exactly, and the last loss_trace entry restates the accepted state, so
    its total never exceeds the first entry's.  ``model`` carries the
    optimized scalar parameters (it differs from the configured model only
    for LINEAR and QUADRATIC).
    """

    stiffness: StiffnessMap
    field: VectorField
    warped: ScalarField
    loss_trace: tuple[LossEntry, ...]
    df_value: float
    model: DeformationModel = dataclass_field(default_factory=DeformationModel.proportional)


def loss_similarity(warped: ScalarField, target: ScalarField) -> float:
    """Mean squared intensity error over all pixels."""
    if warped.values.shape != target.values.shape:
        raise DimensionMismatchError(
            f"warped shape {warped.values.shape} != target shape {target.values.shape}"
        )
    diff = warped.values - target.values
    return float(np.mean(diff * diff))


def loss_smoothness(field: VectorField) -> float:
    """Mean squared forward-difference norm of the displacement field.

    For each pixel the stacked forward differences of dx and dy contribute
    their squared Euclidean norm; the sum is divided by the pixel count.
    """
    dr_x, dc_x = forward_diff(field.dx)
    dr_y, dc_y = forward_diff(field.dy)
    total = (
        np.sum(dr_x.values**2)
        + np.sum(dc_x.values**2)
        + np.sum(dr_y.values**2)
        + np.sum(dc_y.values**2)
    )
    return float(total / field.dx.values.size)


def _forward_diff_adjoint(g_row: np.ndarray, g_col: np.ndarray) -> np.ndarray:
    """Adjoint of forward_diff: maps cotangents of (row-diff, col-diff)
    back to a cotangent of the input plane."""
    out = np.zeros_like(g_row)
    out[1:, :] += g_row[:-1, :]
    out[:-1, :] -= g_row[:-1, :]
    out[:, 1:] += g_col[:, :-1]
    out[:, :-1] -= g_col[:, :-1]
    return out


def _smoothness_grad(field: VectorField) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of loss_smoothness with respect to (dx, dy)."""
    n = field.dx.values.size
    grads = []
    for plane in (field.dx, field.dy):
        dr, dc = forward_diff(plane)
        grads.append(_forward_diff_adjoint(2.0 * dr.values / n, 2.0 * dc.values / n))
    return grads[0], grads[1]


def objective_with_grad(
    moving: ScalarField,
    target: ScalarField,
    kx: np.ndarray,
    ky: np.ndarray,
    df: float,
    model: DeformationModel,
    lambda_reg: float,
):
    """Evaluate the registration objective and its analytic gradients.

    Returns (l_sim, l_reg, total, grad_kx, grad_ky, param_grads) where
    param_grads maps scalar-parameter names to derivatives (empty for
    models without free scalars).
    """
    k = StiffnessMap(ScalarField(kx), ScalarField(ky))
    field = deformation_from_stiffness(k, df, model)
    warped = warp_bilinear(moving, field)
    l_sim = loss_similarity(warped, target)
    l_reg = loss_smoothness(field)
    total = l_sim + lambda_reg * l_reg

    n = moving.values.size
    upstream = ScalarField(2.0 * (warped.values - target.values) / n)
    g_sim = warp_adjoint(moving, field, upstream)
    g_reg_x, g_reg_y = _smoothness_grad(field)
    g_dx = g_sim.dx.values + lambda_reg * g_reg_x
    g_dy = g_sim.dy.values + lambda_reg * g_reg_y

    jac_x, jac_y = deformation_grad_stiffness(k, df, model)
    grad_kx = g_dx * jac_x
    grad_ky = g_dy * jac_y

    param_grads: dict[str, float] = {}
    if model.tag is ModelTag.LINEAR or model.tag is ModelTag.QUADRATIC:
        param_grads["alpha_x"] = float(np.sum(g_dx) * df)
        param_grads["alpha_y"] = float(np.sum(g_dy) * df)
        param_grads["beta_x"] = float(np.sum(g_dx * kx) * df)
        param_grads["beta_y"] = float(np.sum(g_dy * ky) * df)
        if model.tag is ModelTag.QUADRATIC:
            param_grads["gamma_x"] = float(np.sum(g_dx * kx * kx) * df)
            param_grads["gamma_y"] = float(np.sum(g_dy * ky * ky) * df)
    return l_sim, l_reg, total, grad_kx, grad_ky, param_grads


class _Adam:
    """Adaptive-moment gradient descent on one array (or scalar).

    With moment2 = 0 the curvature accumulator is disabled and the update
    degenerates to (momentum) gradient descent, so moment1 = moment2 = 0 is
    plain gradient descent at the raw step size.
    """

    def __init__(self, shape, step, beta1, beta2, eps):
        self.step = step
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)

    def update(self, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        mhat = self.m / (1.0 - self.beta1**self.t)
        if self.beta2 == 0.0:
            return self.step * mhat
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        vhat = self.v / (1.0 - self.beta2**self.t)
        return self.step * mhat / (np.sqrt(vhat) + self.eps)


def _build_pyramid(image: ScalarField, levels: int) -> list[ScalarField]:
    """Finest-first pyramid with `levels` entries."""
    out = [image]
    for _ in range(levels - 1):
        out.append(downsample2(out[-1]))
    return out


def _check_images(moving: ScalarField, target: ScalarField) -> None:
    if moving.values.shape != target.values.shape:
        raise DimensionMismatchError(
            f"moving shape {moving.values.shape} != target shape {target.values.shape}"
        )
    for name, img in (("moving", moving), ("target", target)):
        lo, hi = float(img.values.min()), float(img.values.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"{name} intensities must lie in [0, 1], got [{lo}, {hi}]")


_PARAM_NAMES = ("alpha_x", "alpha_y", "beta_x", "beta_y", "gamma_x", "gamma_y")


def register_pair(
    moving: ScalarField,
    target: ScalarField,
    forces: ForcePair,
    cfg: SolverConfig = SolverConfig(),
) -> RegistrationResult:
    """Register one image pair by coarse-to-fine stiffness optimization.

    Deterministic for fixed inputs and config.  Raises
    SolverDivergedError (carrying the loss trace) if the objective turns
    non-finite, and ConfigError if the pyramid would shrink either image
    dimension below 8 pixels at the coarsest level.
    """
    _check_images(moving, target)
    df = delta_force(forces, cfg.df_variant)
    pyr_moving = _build_pyramid(moving, cfg.levels)
    pyr_target = _build_pyramid(target, cfg.levels)
    coarse_h, coarse_w = pyr_moving[-1].values.shape
    if coarse_h < _MIN_COARSE_DIM or coarse_w < _MIN_COARSE_DIM:
        raise ConfigError(
            f"coarsest pyramid level is {coarse_h}x{coarse_w}; "
            f"needs at least {_MIN_COARSE_DIM}x{_MIN_COARSE_DIM} "
            f"(reduce levels for {moving.height}x{moving.width} images)"
        )

    model = cfg.model
    trace: list[LossEntry] = []
    iteration = 0

    def record(l_sim, l_reg, total):
        nonlocal iteration
        if not math.isfinite(total):
            raise SolverDivergedError(
                f"objective became non-finite at iteration {iteration}", trace
            )
        trace.append(LossEntry(iteration, float(l_sim), float(l_reg), float(total)))
        iteration += 1

    # Baseline: the zero-stiffness state at full resolution. It seeds the
    # monotone acceptance rule and is the trace's initial entry.
    h, w = moving.values.shape
    kx = np.zeros((h, w))
    ky = np.zeros((h, w))
    l_sim0, l_reg0, total0, _, _, _ = objective_with_grad(
        moving, target, kx, ky, df, model, cfg.lambda_reg
    )
    record(l_sim0, l_reg0, total0)
    best = (total0, l_sim0, l_reg0, np.zeros((h, w)), np.zeros((h, w)), model)

    ch, cw = pyr_moving[-1].values.shape
    kx = np.zeros((ch, cw))
    ky = np.zeros((ch, cw))

    for level in range(cfg.levels - 1, -1, -1):
        mov_l = pyr_moving[level]
        tgt_l = pyr_target[level]
        finest = level == 0
        opt_kx = _Adam(kx.shape, cfg.step_size, cfg.moment1, cfg.moment2, cfg.eps)
        opt_ky = _Adam(ky.shape, cfg.step_size, cfg.moment1, cfg.moment2, cfg.eps)
        opt_p = _Adam(
            (len(_PARAM_NAMES),),
            cfg.step_size * _PARAM_STEP_SCALE,
            cfg.moment1,
            cfg.moment2,
            cfg.eps,
        )
        level_totals: list[float] = []
        for _ in range(cfg.iters_per_level):
            l_sim, l_reg, total, g_kx, g_ky, g_params = objective_with_grad(
                mov_l, tgt_l, kx, ky, df, model, cfg.lambda_reg
            )
            record(l_sim, l_reg, total)
            level_totals.append(total)
            if finest and total < best[0]:
                best = (total, l_sim, l_reg, kx.copy(), ky.copy(), model)
            t = len(level_totals) - 1
            if t >= _STOP_WINDOW:
                prev = level_totals[t - _STOP_WINDOW]
                if prev - total < cfg.stop_rel_tol * max(prev, 1e-30):
                    break
            kx = kx - opt_kx.update(g_kx)
            ky = ky - opt_ky.update(g_ky)
            if g_params:
                grad_vec = np.array([g_params.get(n, 0.0) for n in _PARAM_NAMES])
                step_vec = opt_p.update(grad_vec)
                updates = {
                    n: getattr(model, n) - step_vec[i]
                    for i, n in enumerate(_PARAM_NAMES)
                    if n in g_params
                }
                model = replace(model, **updates)

        if finest:
            # The last stepped state was never evaluated inside the loop.
            l_sim, l_reg, total, _, _, _ = objective_with_grad(
                mov_l, tgt_l, kx, ky, df, model, cfg.lambda_reg
            )
            record(l_sim, l_reg, total)
            if total < best[0]:
                best = (total, l_sim, l_reg, kx.copy(), ky.copy(), model)
        else:
            nh, nw = pyr_moving[level - 1].values.shape
            # Displacements are in pixel units, so doubling the grid
            # doubles the field; alpha and gamma rescale to preserve D.
            kx = 2.0 * upsample2(ScalarField(kx), nh, nw).values
            ky = 2.0 * upsample2(ScalarField(ky), nh, nw).values
            if model.tag is ModelTag.LINEAR or model.tag is ModelTag.QUADRATIC:
                model = replace(
                    model,
                    alpha_x=2.0 * model.alpha_x,
                    alpha_y=2.0 * model.alpha_y,
                    gamma_x=0.5 * model.gamma_x,
                    gamma_y=0.5 * model.gamma_y,
                )

    total_b, l_sim_b, l_reg_b, kx_b, ky_b, model_b = best
    stiffness = StiffnessMap(ScalarField(kx_b), ScalarField(ky_b))
    field = deformation_from_stiffness(stiffness, df, model_b)
    warped = warp_bilinear(moving, field)
    record(l_sim_b, l_reg_b, total_b)
    return RegistrationResult(
        stiffness=stiffness,
        field=field,
        warped=warped,
        loss_trace=tuple(trace),
        df_value=df,
        model=model_b,
    )
