"""Command-line front end: datasets, registration, evaluation, benchmarks.

Subcommands:
  phantom   generate a synthetic dataset with ground truth
  register  run one force-paired registration
  evaluate  score a registration result against references
  viz       render a flow field to a color PPM
  bench     batch register+evaluate over a dataset, emitting a CSV

Exit codes: 0 ok, 2 I/O or parse error, 3 solver failure, 4 dimension
mismatch. The PADREG_THREADS environment variable caps bench workers.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import formats
from .errors import ConfigError, DimensionMismatchError, SolverDivergedError
from .fields import ScalarField, VectorField
from .force import DeltaForceVariant, ForcePair
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
from .phantom import (
    LABEL_ARTERY,
    LABEL_VEIN,
    Inclusion,
    PhantomConfig,
    SpeckleSpec,
    make_scene,
    render_pair,
)
from .physics import DeformationModel
from .solver import SolverConfig, register_pair
from .flowviz import flow_to_color
from .warp import warp_nearest

EXIT_OK = 0
EXIT_IO = 2
EXIT_SOLVER = 3
EXIT_DIMS = 4

_MODE_FACTORIES = {
    "physics": DeformationModel.proportional,
    "direct": DeformationModel.direct,
    "linear": DeformationModel.linear,
    "quadratic": DeformationModel.quadratic,
}
_VARIANT_NAMES = tuple(v.value for v in DeltaForceVariant)

_BENCH_COLUMNS = (
    "pair_id", "mode", "df_variant",
    "dsc_artery", "dsc_vein", "hd95_artery", "hd95_vein",
    "ssim", "mse", "neg_mi", "dr_percent", "epe",
    "wall_ms", "status",
)
# metric columns in _BENCH_COLUMNS order, paired with report attributes
_METRIC_COLUMNS = (
    ("dsc_artery", "dsc_artery"), ("dsc_vein", "dsc_vein"),
    ("hd95_artery", "hd95_artery"), ("hd95_vein", "hd95_vein"),
    ("ssim", "ssim"), ("mse", "mse"),
)


# ---------------------------------------------------------------------------
# phantom dataset generation

_PHANTOM_KEYS = {
    "height", "width", "inclusions", "base_kx", "depth_decay", "ky_scale",
    "speckle", "blur_sigma",
}
_FORCE_KEYS = {"force_low", "force_high", "force_min_delta", "force_max_delta"}
_INCLUSION_KEYS = {"center_row", "center_col", "radius", "stiffness_factor",
                   "label"}

_DEFAULT_DATASET = {
    "height": 64,
    "width": 64,
    "inclusions": [
        {"center_row": 24.0, "center_col": 20.0, "radius": 7.0,
         "stiffness_factor": 0.3, "label": 1},
        {"center_row": 36.0, "center_col": 44.0, "radius": 9.0,
         "stiffness_factor": 2.0, "label": 2},
    ],
    "base_kx": 5.0,
    "depth_decay": 0.15,
    "ky_scale": 0.1,
    "speckle": {"kind": "multiplicative", "sigma": 0.35},
    "blur_sigma": 1.0,
    "force_low": 3.0,
    "force_high": 8.0,
    "force_min_delta": 2.0,
    "force_max_delta": 4.0,
}


def _parse_speckle(raw) -> SpeckleSpec:
    if not isinstance(raw, dict) or "kind" not in raw:
        raise ConfigError("speckle must be an object with a 'kind' key")
    kind = raw["kind"]
    if kind == "none":
        if set(raw) != {"kind"}:
            raise ConfigError("speckle 'none' takes no further keys")
        return SpeckleSpec.none()
    if kind == "multiplicative":
        if set(raw) != {"kind", "sigma"}:
            raise ConfigError("speckle 'multiplicative' needs exactly 'sigma'")
        return SpeckleSpec.multiplicative(float(raw["sigma"]))
    raise ConfigError(f"unknown speckle kind {kind!r}")


def _parse_inclusion(raw) -> Inclusion:
    if not isinstance(raw, dict):
        raise ConfigError("each inclusion must be an object")
    unknown = set(raw) - _INCLUSION_KEYS
    if unknown:
        raise ConfigError(f"unknown inclusion keys: {sorted(unknown)}")
    missing = _INCLUSION_KEYS - set(raw)
    if missing:
        raise ConfigError(f"inclusion missing keys: {sorted(missing)}")
    return Inclusion(
        center_row=float(raw["center_row"]),
        center_col=float(raw["center_col"]),
        radius=float(raw["radius"]),
        stiffness_factor=float(raw["stiffness_factor"]),
        label=int(raw["label"]),
    )


def _dataset_settings(config_text: Optional[str]) -> dict:
    settings = json.loads(json.dumps(_DEFAULT_DATASET))
    if config_text is not None:
        loaded = json.loads(config_text)
        if not isinstance(loaded, dict):
            raise ConfigError("dataset config must be a JSON object")
        unknown = set(loaded) - _PHANTOM_KEYS - _FORCE_KEYS
        if unknown:
            raise ConfigError(f"unknown dataset config keys: {sorted(unknown)}")
        settings.update(loaded)
    if not settings["force_low"] >= 0.0:
        raise ConfigError("force_low must be non-negative")
    if not settings["force_high"] >= settings["force_low"]:
        raise ConfigError("force_high must be >= force_low")
    if not settings["force_max_delta"] > settings["force_min_delta"] >= 0.0:
        raise ConfigError("force deltas must satisfy max > min >= 0")
    return settings


def _scene_config(settings: dict, seed: int) -> PhantomConfig:
    return PhantomConfig(
        height=int(settings["height"]),
        width=int(settings["width"]),
        inclusions=tuple(_parse_inclusion(i) for i in settings["inclusions"]),
        base_kx=float(settings["base_kx"]),
        depth_decay=float(settings["depth_decay"]),
        ky_scale=float(settings["ky_scale"]),
        speckle=_parse_speckle(settings["speckle"]),
        blur_sigma=float(settings["blur_sigma"]),
        seed=seed,
    )


def _sample_forces(rng: np.random.Generator, settings: dict) -> ForcePair:
    f_moving = rng.uniform(settings["force_low"], settings["force_high"])
    # (1 - u) with u in [0, 1) keeps the differential strictly above the floor
    span = settings["force_max_delta"] - settings["force_min_delta"]
    delta = settings["force_min_delta"] + span * (1.0 - rng.random())
    return ForcePair(f_moving, f_moving + delta)


def cmd_phantom(args: argparse.Namespace) -> int:
    config_text = None
    if args.config is not None:
        with open(args.config, "r", encoding="ascii") as handle:
            config_text = handle.read()
    settings = _dataset_settings(config_text)
    if args.pairs < 0:
        raise ValueError("--pairs must be non-negative")

    scene = make_scene(_scene_config(settings, args.seed))
    rng = np.random.default_rng(args.seed)

    out = args.out
    for sub in ("frames", "masks", "truth"):
        os.makedirs(os.path.join(out, sub), exist_ok=True)
    formats.write_stiffness(scene.k_true, os.path.join(out, "truth", "k_true.flo"))

    force_rows: List[Tuple[str, float]] = []
    pair_rows: List[Tuple[str, str]] = []
    for index in range(args.pairs):
        forces = _sample_forces(rng, settings)
        pair = render_pair(scene, forces)
        moving_id = f"{2 * index:04d}"
        target_id = f"{2 * index + 1:04d}"
        for frame_id, image, mask in (
                (moving_id, pair.moving, pair.masks_moving),
                (target_id, pair.target, pair.masks_target)):
            formats.write_pgm(image, os.path.join(out, "frames", f"frame_{frame_id}.pgm"))
            formats.write_mask_pgm(LabelMask.from_field(mask),
                                   os.path.join(out, "masks", f"mask_{frame_id}.pgm"))
        formats.write_flow(pair.d_true,
                           os.path.join(out, "truth", f"flow_{index:04d}.flo"))
        force_rows.append((moving_id, forces.f_moving))
        force_rows.append((target_id, forces.f_target))
        pair_rows.append((moving_id, target_id))

    with open(os.path.join(out, "forces.csv"), "w", encoding="ascii", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["frame_id", "force_newton"])
        for frame_id, force in force_rows:
            writer.writerow([frame_id, repr(force)])
    with open(os.path.join(out, "pairs.csv"), "w", encoding="ascii", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["moving_id", "target_id"])
        for moving_id, target_id in pair_rows:
            writer.writerow([moving_id, target_id])

    manifest = {
        "dataset": "force-paired phantom",
        "n_pairs": args.pairs,
        "seed": args.seed,
        "frame_bits": 16,
        "flo_component_mapping": {
            "horizontal": "dy (lateral, positive toward larger column)",
            "vertical": "dx (axial, positive toward the probe / image top)",
        },
        "truth": {
            "flow": "truth/flow_<pair>.flo, one per pairs.csv row",
            "stiffness": "truth/k_true.flo (kx vertical, ky horizontal)",
        },
        "config": settings,
    }
    with open(os.path.join(out, "manifest.json"), "w", encoding="ascii") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
        handle.write("\n")
    print(f"wrote {args.pairs} pair(s) under {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# single-pair registration

def _solver_config(path: Optional[str], mode: Optional[str],
                   variant: Optional[str]) -> SolverConfig:
    if path is not None:
        with open(path, "r", encoding="ascii") as handle:
            cfg = SolverConfig.from_json(handle.read())
    else:
        cfg = SolverConfig()
    if mode is not None:
        cfg = replace(cfg, model=_MODE_FACTORIES[mode]())
    if variant is not None:
        cfg = replace(cfg, df_variant=DeltaForceVariant(variant))
    return cfg


def _parse_force(text: str, name: str) -> float:
    value = float(text)
    if not value >= 0.0:
        raise ValueError(f"{name} must be a non-negative force in newtons")
    return value


def cmd_register(args: argparse.Namespace) -> int:
    moving = formats.read_pgm(args.moving)
    target = formats.read_pgm(args.target)
    forces = ForcePair(_parse_force(args.force_moving, "--force-moving"),
                       _parse_force(args.force_target, "--force-target"))
    cfg = _solver_config(args.solver_config, args.mode, args.df_variant)
    result = register_pair(moving, target, forces, cfg)
    formats.write_flow(result.field, args.out_field)
    formats.write_stiffness(result.stiffness, args.out_stiffness)
    formats.write_pgm(result.warped, args.out_warped)
    final = result.loss_trace[-1]
    print(f"L_sim={final.l_sim!r} L_reg={final.l_reg!r} total={final.total!r}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluation

def _evaluate(field: VectorField, warped: ScalarField, target: ScalarField,
              df: float, masks: Optional[Tuple[LabelMask, LabelMask]],
              truth: Optional[VectorField]) -> MetricReport:
    values: Dict[str, float] = {
        "ssim": ssim(warped, target),
        "mi": mutual_information(warped, target),
        "mse": mse(warped, target),
        "dr": discrepancy_rate(field.dx, df),
    }
    if masks is not None:
        warped_mask, target_mask = masks
        values["dsc_artery"] = dice(warped_mask, target_mask, LABEL_ARTERY)
        values["dsc_vein"] = dice(warped_mask, target_mask, LABEL_VEIN)
        values["hd95_artery"] = hd95(warped_mask, target_mask, LABEL_ARTERY)
        values["hd95_vein"] = hd95(warped_mask, target_mask, LABEL_VEIN)
    if truth is not None:
        values["epe"] = endpoint_error(field, truth)
    return MetricReport(**values)


def cmd_evaluate(args: argparse.Namespace) -> int:
    field = formats.read_flow(args.field)
    warped = formats.read_pgm(args.warped)
    target = formats.read_pgm(args.target)
    if (args.mask_warped is None) != (args.mask_target is None):
        raise ValueError("provide both --mask-warped and --mask-target or neither")
    masks = None
    if args.mask_warped is not None:
        masks = (formats.read_mask_pgm(args.mask_warped),
                 formats.read_mask_pgm(args.mask_target))
    truth = None
    if args.truth_field is not None:
        truth = formats.read_flow(args.truth_field)
    report = _evaluate(field, warped, target, args.df, masks, truth)
    with open(args.out, "w", encoding="ascii") as handle:
        handle.write(report.to_json())
        handle.write("\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# flow visualization

def cmd_viz(args: argparse.Namespace) -> int:
    field = formats.read_flow(args.field)
    image = flow_to_color(field, args.max_mag)
    formats.write_ppm(image, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# benchmark harness

def _read_forces_csv(path: str) -> Dict[str, float]:
    forces: Dict[str, float] = {}
    with open(path, "r", encoding="ascii", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != ["frame_id", "force_newton"]:
            raise ValueError(f"forces.csv header must be frame_id,force_newton, got {header}")
        for row in reader:
            if len(row) != 2:
                raise ValueError(f"malformed forces.csv row: {row}")
            value = float(row[1])
            if not value >= 0.0:
                raise ValueError(f"negative force for frame {row[0]}")
            forces[row[0]] = value
    return forces


def _read_pairs_csv(path: str) -> List[Tuple[str, str]]:
    pairs: List[Tuple[str, str]] = []
    with open(path, "r", encoding="ascii", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != ["moving_id", "target_id"]:
            raise ValueError(f"pairs.csv header must be moving_id,target_id, got {header}")
        for row in reader:
            if len(row) != 2:
                raise ValueError(f"malformed pairs.csv row: {row}")
            pairs.append((row[0], row[1]))
    return pairs


def _bench_job(job: dict) -> dict:
    """Register and evaluate one (pair, mode, variant) cell; never raises."""
    row = {name: "" for name in _BENCH_COLUMNS}
    row["pair_id"] = job["pair_id"]
    row["mode"] = job["mode"]
    row["df_variant"] = job["variant"]
    start = time.perf_counter()
    try:
        moving = formats.read_pgm(job["moving_path"])
        target = formats.read_pgm(job["target_path"])
        forces = ForcePair(job["f_moving"], job["f_target"])
        cfg = replace(job["config"],
                      model=_MODE_FACTORIES[job["mode"]](),
                      df_variant=DeltaForceVariant(job["variant"]))
        result = register_pair(moving, target, forces, cfg)
        masks = None
        if job["mask_moving_path"] is not None:
            moving_mask = formats.read_mask_pgm(job["mask_moving_path"])
            target_mask = formats.read_mask_pgm(job["mask_target_path"])
            carried = warp_nearest(
                ScalarField(moving_mask.labels.astype(np.float64)), result.field)
            masks = (LabelMask.from_field(carried), target_mask)
        truth = None
        if job["truth_path"] is not None:
            truth = formats.read_flow(job["truth_path"])
        report = _evaluate(result.field, result.warped, target,
                           result.df_value, masks, truth)
    except Exception as exc:  # recorded per-row, the batch continues
        row["status"] = type(exc).__name__
        row["wall_ms"] = f"{(time.perf_counter() - start) * 1000.0:.3f}"
        return row
    for column, attr in _METRIC_COLUMNS:
        value = getattr(report, attr)
        if value is not None:
            row[column] = repr(value)
    row["neg_mi"] = repr(-report.mi)
    row["dr_percent"] = repr(100.0 * report.dr)
    if report.epe is not None:
        row["epe"] = repr(report.epe)
    row["status"] = "ok"
    row["wall_ms"] = f"{(time.perf_counter() - start) * 1000.0:.3f}"
    return row


def _median_rows(rows: List[dict]) -> List[dict]:
    numeric = [name for name, _ in _METRIC_COLUMNS] + ["neg_mi", "dr_percent", "epe"]
    configs = sorted({(r["mode"], r["df_variant"]) for r in rows})
    medians = []
    for mode, variant in configs:
        ok = [r for r in rows
              if r["mode"] == mode and r["df_variant"] == variant
              and r["status"] == "ok"]
        summary = {name: "" for name in _BENCH_COLUMNS}
        summary["pair_id"] = "MEDIAN"
        summary["mode"] = mode
        summary["df_variant"] = variant
        summary["status"] = "median"
        for name in numeric:
            cells = [float(r[name]) for r in ok if r[name] != ""]
            if cells:
                summary[name] = repr(float(np.median(cells)))
        medians.append(summary)
    return medians


def _worker_cap(requested: int) -> int:
    cap = os.environ.get("PADREG_THREADS")
    workers = requested
    if cap is not None:
        workers = min(workers, max(1, int(cap)))
    return max(1, workers)


def cmd_bench(args: argparse.Namespace) -> int:
    root = args.dataset
    modes = sorted(set(args.modes.split(",")))
    variants = sorted(set(args.df_variants.split(",")))
    for mode in modes:
        if mode not in _MODE_FACTORIES:
            raise ValueError(f"unknown mode {mode!r}; choose from "
                             f"{sorted(_MODE_FACTORIES)}")
    for variant in variants:
        if variant not in _VARIANT_NAMES:
            raise ValueError(f"unknown df variant {variant!r}; choose from "
                             f"{sorted(_VARIANT_NAMES)}")
    cfg = _solver_config(args.solver_config, None, None)

    forces = _read_forces_csv(os.path.join(root, "forces.csv"))
    pairs = _read_pairs_csv(os.path.join(root, "pairs.csv"))

    jobs = []
    for index, (moving_id, target_id) in enumerate(pairs):
        for frame_id in (moving_id, target_id):
            if frame_id not in forces:
                raise ValueError(f"frame {frame_id} missing from forces.csv")
            frame_path = os.path.join(root, "frames", f"frame_{frame_id}.pgm")
            if not os.path.exists(frame_path):
                raise ValueError(f"frame file missing: {frame_path}")
        mask_moving = os.path.join(root, "masks", f"mask_{moving_id}.pgm")
        mask_target = os.path.join(root, "masks", f"mask_{target_id}.pgm")
        have_masks = os.path.exists(mask_moving) and os.path.exists(mask_target)
        truth = os.path.join(root, "truth", f"flow_{index:04d}.flo")
        have_truth = os.path.exists(truth)
        for mode in modes:
            for variant in variants:
                jobs.append({
                    "pair_id": f"{index:04d}",
                    "mode": mode,
                    "variant": variant,
                    "moving_path": os.path.join(root, "frames", f"frame_{moving_id}.pgm"),
                    "target_path": os.path.join(root, "frames", f"frame_{target_id}.pgm"),
                    "f_moving": forces[moving_id],
                    "f_target": forces[target_id],
                    "config": cfg,
                    "mask_moving_path": mask_moving if have_masks else None,
                    "mask_target_path": mask_target if have_masks else None,
                    "truth_path": truth if have_truth else None,
                })

    workers = _worker_cap(args.workers)
    if workers == 1 or not jobs:
        rows = [_bench_job(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_bench_job, jobs))
    rows.sort(key=lambda r: (r["pair_id"], r["mode"], r["df_variant"]))

    with open(args.out, "w", encoding="ascii", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(_BENCH_COLUMNS)
        for row in rows + _median_rows(rows):
            writer.writerow([row[name] for name in _BENCH_COLUMNS])
    print(f"wrote {len(rows)} result row(s) to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing and dispatch

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="padreg",
        description="Physics-aware deformable registration for "
                    "force-paired image sequences.")
    sub = parser.add_subparsers(dest="command", required=True)

    phantom = sub.add_parser("phantom", help="generate a synthetic dataset")
    phantom.add_argument("--out", required=True, help="output dataset directory")
    phantom.add_argument("--pairs", type=int, default=1, help="number of image pairs")
    phantom.add_argument("--seed", type=int, default=0, help="master random seed")
    phantom.add_argument("--config", default=None,
                         help="JSON file overriding scene and force settings")
    phantom.set_defaults(func=cmd_phantom)

    register = sub.add_parser("register", help="register one image pair")
    register.add_argument("--moving", required=True, help="moving frame PGM")
    register.add_argument("--target", required=True, help="target frame PGM")
    register.add_argument("--force-moving", required=True,
                          help="contact force of the moving frame (N)")
    register.add_argument("--force-target", required=True,
                          help="contact force of the target frame (N)")
    register.add_argument("--mode", choices=sorted(_MODE_FACTORIES), default=None,
                          help="deformation model (default from solver config)")
    register.add_argument("--df-variant", choices=sorted(_VARIANT_NAMES),
                          default=None, help="force differential definition")
    register.add_argument("--solver-config", default=None,
                          help="JSON file with solver settings")
    register.add_argument("--out-field", required=True, help="output .flo path")
    register.add_argument("--out-stiffness", required=True, help="output .flo path")
    register.add_argument("--out-warped", required=True, help="output PGM path")
    register.set_defaults(func=cmd_register)

    evaluate = sub.add_parser("evaluate", help="score a registration result")
    evaluate.add_argument("--field", required=True, help="estimated field .flo")
    evaluate.add_argument("--truth-field", default=None, help="ground-truth .flo")
    evaluate.add_argument("--warped", required=True, help="warped moving PGM")
    evaluate.add_argument("--target", required=True, help="target PGM")
    evaluate.add_argument("--mask-warped", default=None, help="warped mask PGM")
    evaluate.add_argument("--mask-target", default=None, help="target mask PGM")
    evaluate.add_argument("--df", type=float, required=True,
                          help="signed force differential used for DR")
    evaluate.add_argument("--out", required=True, help="output JSON path")
    evaluate.set_defaults(func=cmd_evaluate)

    viz = sub.add_parser("viz", help="render a field as a color PPM")
    viz.add_argument("--field", required=True, help="field .flo path")
    viz.add_argument("--out", required=True, help="output PPM path")
    viz.add_argument("--max-mag", type=float, default=None,
                     help="saturation scale (default: field maximum)")
    viz.set_defaults(func=cmd_viz)

    bench = sub.add_parser("bench", help="batch register and evaluate")
    bench.add_argument("--dataset", required=True, help="dataset directory")
    bench.add_argument("--modes", default="physics,direct",
                       help="comma-separated deformation modes")
    bench.add_argument("--df-variants", default="normalized",
                       help="comma-separated force differential variants")
    bench.add_argument("--solver-config", default=None,
                       help="JSON file with solver settings")
    bench.add_argument("--out", required=True, help="output CSV path")
    bench.add_argument("--workers", type=int, default=1,
                       help="parallel worker processes")
    bench.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SolverDivergedError as exc:
        print(f"error: solver failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except DimensionMismatchError as exc:
        print(f"error: dimension mismatch: {exc}", file=sys.stderr)
        return EXIT_DIMS
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
