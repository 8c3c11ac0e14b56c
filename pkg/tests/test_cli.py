import csv
import json
import os
import re

import numpy as np
import pytest

from padreg import formats
from padreg.cli import EXIT_DIMS, EXIT_IO, EXIT_OK, EXIT_SOLVER, _worker_cap, main
from padreg.fields import ScalarField, VectorField

FAST_SOLVER = {"levels": 2, "iters_per_level": 60, "step_size": 0.1}

SCENE_32 = {
    "height": 32, "width": 32,
    "inclusions": [
        {"center_row": 12.0, "center_col": 10.0, "radius": 4.0,
         "stiffness_factor": 0.3, "label": 1},
        {"center_row": 19.0, "center_col": 22.0, "radius": 5.0,
         "stiffness_factor": 2.0, "label": 2},
    ],
}


def run_phantom(root, seed=5, pairs=2):
    cfg_path = root.parent / f"{root.name}_scene.json"
    cfg_path.write_text(json.dumps(SCENE_32))
    rc = main(["phantom", "--out", str(root), "--pairs", str(pairs),
               "--seed", str(seed), "--config", str(cfg_path)])
    assert rc == EXIT_OK
    return root


def read_forces(root):
    with open(root / "forces.csv", newline="") as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["frame_id", "force_newton"]
    return {frame: float(force) for frame, force in rows[1:]}


def tree_bytes(root):
    out = {}
    for base, _, names in os.walk(root):
        for name in names:
            path = os.path.join(base, name)
            with open(path, "rb") as handle:
                out[os.path.relpath(path, root)] = handle.read()
    return out


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    return run_phantom(tmp_path_factory.mktemp("data") / "set")


@pytest.fixture(scope="module")
def solver_json(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "solver.json"
    path.write_text(json.dumps(FAST_SOLVER))
    return str(path)


@pytest.fixture(scope="module")
def registered(dataset, solver_json, tmp_path_factory):
    out = tmp_path_factory.mktemp("reg")
    forces = read_forces(dataset)
    rc = main([
        "register",
        "--moving", str(dataset / "frames" / "frame_0000.pgm"),
        "--target", str(dataset / "frames" / "frame_0001.pgm"),
        "--force-moving", repr(forces["0000"]),
        "--force-target", repr(forces["0001"]),
        "--solver-config", solver_json,
        "--out-field", str(out / "d.flo"),
        "--out-stiffness", str(out / "k.flo"),
        "--out-warped", str(out / "warped.pgm"),
    ])
    assert rc == EXIT_OK
    return out


# ---------------------------------------------------------------------------
# phantom

def test_phantom_layout(dataset):
    for index in range(4):
        assert (dataset / "frames" / f"frame_{index:04d}.pgm").exists()
        assert (dataset / "masks" / f"mask_{index:04d}.pgm").exists()
    assert (dataset / "truth" / "flow_0000.flo").exists()
    assert (dataset / "truth" / "flow_0001.flo").exists()
    assert (dataset / "truth" / "k_true.flo").exists()
    with open(dataset / "pairs.csv", newline="") as handle:
        rows = list(csv.reader(handle))
    assert rows == [["moving_id", "target_id"], ["0000", "0001"], ["0002", "0003"]]
    frame = formats.read_pgm(dataset / "frames" / "frame_0000.pgm")
    assert (frame.height, frame.width) == (32, 32)
    truth = formats.read_flow(dataset / "truth" / "flow_0000.flo")
    assert (truth.dx.height, truth.dx.width) == (32, 32)


def test_phantom_manifest_has_no_absolute_paths(dataset):
    text = (dataset / "manifest.json").read_text()
    manifest = json.loads(text)
    assert manifest["n_pairs"] == 2
    assert str(dataset) not in text
    for value in json.dumps(manifest).split('"'):
        assert not value.startswith("/")


def test_phantom_force_differentials_exceed_two(dataset):
    forces = read_forces(dataset)
    with open(dataset / "pairs.csv", newline="") as handle:
        pairs = list(csv.reader(handle))[1:]
    assert pairs
    for moving_id, target_id in pairs:
        assert abs(forces[target_id] - forces[moving_id]) > 2.0


def test_phantom_reruns_are_byte_identical(tmp_path):
    a = run_phantom(tmp_path / "a", seed=11)
    b = run_phantom(tmp_path / "b", seed=11)
    ta = tree_bytes(a)
    tb = tree_bytes(b)
    assert ta.keys() == tb.keys()
    assert all(ta[name] == tb[name] for name in ta)


def test_phantom_different_seed_differs(tmp_path, dataset):
    other = run_phantom(tmp_path / "c", seed=12)
    assert read_forces(other) != read_forces(dataset)


def test_phantom_zero_pairs(tmp_path):
    root = run_phantom(tmp_path / "empty", pairs=0)
    assert read_forces(root) == {}
    with open(root / "pairs.csv", newline="") as handle:
        assert list(csv.reader(handle)) == [["moving_id", "target_id"]]
    assert os.listdir(root / "frames") == []
    assert (root / "truth" / "k_true.flo").exists()


def test_phantom_rejects_unknown_config_key(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"heigth": 32}))
    rc = main(["phantom", "--out", str(tmp_path / "out"), "--pairs", "1",
               "--seed", "0", "--config", str(cfg)])
    assert rc == EXIT_IO


# ---------------------------------------------------------------------------
# register

def test_register_outputs_parse(registered):
    field = formats.read_flow(registered / "d.flo")
    stiffness = formats.read_stiffness(registered / "k.flo")
    warped = formats.read_pgm(registered / "warped.pgm")
    assert (field.dx.height, field.dx.width) == (32, 32)
    assert (stiffness.kx.height, stiffness.kx.width) == (32, 32)
    assert (warped.height, warped.width) == (32, 32)
    assert np.max(np.abs(field.dx.values)) > 0.0


def test_register_prints_loss_line(dataset, solver_json, tmp_path, capsys):
    forces = read_forces(dataset)
    rc = main([
        "register",
        "--moving", str(dataset / "frames" / "frame_0000.pgm"),
        "--target", str(dataset / "frames" / "frame_0001.pgm"),
        "--force-moving", repr(forces["0000"]),
        "--force-target", repr(forces["0001"]),
        "--solver-config", solver_json,
        "--out-field", str(tmp_path / "d.flo"),
        "--out-stiffness", str(tmp_path / "k.flo"),
        "--out-warped", str(tmp_path / "w.pgm"),
    ])
    assert rc == EXIT_OK
    line = capsys.readouterr().out.strip().splitlines()[-1]
    match = re.fullmatch(
        r"L_sim=(\S+) L_reg=(\S+) total=(\S+)", line)
    assert match is not None
    l_sim, l_reg, total = (float(g) for g in match.groups())
    assert l_sim >= 0.0 and l_reg >= 0.0
    # default lambda_reg is 0.03; FAST_SOLVER does not override it
    assert total == pytest.approx(l_sim + 0.03 * l_reg, rel=1e-12)


def test_register_identity_pair_is_exact(dataset, tmp_path, capsys):
    frame = dataset / "frames" / "frame_0000.pgm"
    rc = main([
        "register",
        "--moving", str(frame), "--target", str(frame),
        "--force-moving", "4.0", "--force-target", "4.0",
        "--out-field", str(tmp_path / "d.flo"),
        "--out-stiffness", str(tmp_path / "k.flo"),
        "--out-warped", str(tmp_path / "w.pgm"),
    ])
    assert rc == EXIT_OK
    line = capsys.readouterr().out.strip().splitlines()[-1]
    assert line == "L_sim=0.0 L_reg=0.0 total=0.0"
    field = formats.read_flow(tmp_path / "d.flo")
    assert np.all(field.dx.values == 0.0)
    assert np.all(field.dy.values == 0.0)
    # zero field, so the rewritten warped frame matches the input bytes
    assert (tmp_path / "w.pgm").read_bytes() == frame.read_bytes()


def test_register_missing_input_exits_two(tmp_path):
    rc = main([
        "register",
        "--moving", str(tmp_path / "no_such.pgm"),
        "--target", str(tmp_path / "no_such.pgm"),
        "--force-moving", "3", "--force-target", "6",
        "--out-field", str(tmp_path / "d.flo"),
        "--out-stiffness", str(tmp_path / "k.flo"),
        "--out-warped", str(tmp_path / "w.pgm"),
    ])
    assert rc == EXIT_IO


def test_register_negative_force_exits_two(dataset, tmp_path):
    frame = str(dataset / "frames" / "frame_0000.pgm")
    rc = main([
        "register", "--moving", frame, "--target", frame,
        "--force-moving", "-1.0", "--force-target", "6",
        "--out-field", str(tmp_path / "d.flo"),
        "--out-stiffness", str(tmp_path / "k.flo"),
        "--out-warped", str(tmp_path / "w.pgm"),
    ])
    assert rc == EXIT_IO


def test_register_unknown_solver_key_exits_two(dataset, tmp_path):
    bad = tmp_path / "solver.json"
    bad.write_text(json.dumps({"momentum": 0.9}))
    frame = str(dataset / "frames" / "frame_0000.pgm")
    rc = main([
        "register", "--moving", frame, "--target", frame,
        "--force-moving", "3", "--force-target", "6",
        "--solver-config", str(bad),
        "--out-field", str(tmp_path / "d.flo"),
        "--out-stiffness", str(tmp_path / "k.flo"),
        "--out-warped", str(tmp_path / "w.pgm"),
    ])
    assert rc == EXIT_IO


def test_register_divergence_exits_three(dataset, tmp_path):
    cfg = tmp_path / "solver.json"
    cfg.write_text(json.dumps({"step_size": 1e30, "moment1": 0.0,
                               "moment2": 0.0, "levels": 1,
                               "iters_per_level": 10}))
    forces = read_forces(dataset)
    with np.errstate(over="ignore", invalid="ignore"):
        rc = main([
            "register",
            "--moving", str(dataset / "frames" / "frame_0000.pgm"),
            "--target", str(dataset / "frames" / "frame_0001.pgm"),
            "--force-moving", repr(forces["0000"]),
            "--force-target", repr(forces["0001"]),
            "--solver-config", str(cfg),
            "--out-field", str(tmp_path / "d.flo"),
            "--out-stiffness", str(tmp_path / "k.flo"),
            "--out-warped", str(tmp_path / "w.pgm"),
        ])
    assert rc == EXIT_SOLVER


# ---------------------------------------------------------------------------
# evaluate

def test_evaluate_full_report(dataset, registered, tmp_path):
    out = tmp_path / "report.json"
    rc = main([
        "evaluate",
        "--field", str(registered / "d.flo"),
        "--truth-field", str(dataset / "truth" / "flow_0000.flo"),
        "--warped", str(registered / "warped.pgm"),
        "--target", str(dataset / "frames" / "frame_0001.pgm"),
        "--mask-warped", str(dataset / "masks" / "mask_0001.pgm"),
        "--mask-target", str(dataset / "masks" / "mask_0001.pgm"),
        "--df", "1.0",
        "--out", str(out),
    ])
    assert rc == EXIT_OK
    report = json.loads(out.read_text())
    assert set(report) == {"dsc_artery", "dsc_vein", "hd95_artery", "hd95_vein",
                           "ssim", "mi", "mse", "dr", "epe"}
    # identical masks were passed on both sides
    assert report["dsc_artery"] == 1.0
    assert report["hd95_vein"] == 0.0
    assert 0.0 <= report["dr"] <= 1.0
    assert report["epe"] >= 0.0
    assert report["mi"] >= 0.0


def test_evaluate_optional_blocks_absent(dataset, registered, tmp_path):
    out = tmp_path / "report.json"
    rc = main([
        "evaluate",
        "--field", str(registered / "d.flo"),
        "--warped", str(registered / "warped.pgm"),
        "--target", str(dataset / "frames" / "frame_0001.pgm"),
        "--df", "1.0",
        "--out", str(out),
    ])
    assert rc == EXIT_OK
    report = json.loads(out.read_text())
    assert set(report) == {"ssim", "mi", "mse", "dr"}


def test_evaluate_single_mask_exits_two(dataset, registered, tmp_path):
    rc = main([
        "evaluate",
        "--field", str(registered / "d.flo"),
        "--warped", str(registered / "warped.pgm"),
        "--target", str(dataset / "frames" / "frame_0001.pgm"),
        "--mask-warped", str(dataset / "masks" / "mask_0001.pgm"),
        "--df", "1.0",
        "--out", str(tmp_path / "report.json"),
    ])
    assert rc == EXIT_IO


def test_evaluate_dimension_mismatch_exits_four(registered, tmp_path):
    small = tmp_path / "small.pgm"
    formats.write_pgm(ScalarField.full(16, 16, 0.5), small)
    rc = main([
        "evaluate",
        "--field", str(registered / "d.flo"),
        "--warped", str(registered / "warped.pgm"),
        "--target", str(small),
        "--df", "1.0",
        "--out", str(tmp_path / "report.json"),
    ])
    assert rc == EXIT_DIMS


# ---------------------------------------------------------------------------
# viz

def test_viz_zero_field_is_white(tmp_path):
    flo = tmp_path / "zero.flo"
    formats.write_flow(VectorField(ScalarField.zeros(3, 4), ScalarField.zeros(3, 4)), flo)
    out = tmp_path / "zero.ppm"
    rc = main(["viz", "--field", str(flo), "--out", str(out)])
    assert rc == EXIT_OK
    img = formats.read_ppm(out)
    assert np.all(img.pixels == 255)


def test_viz_rerun_is_byte_identical(registered, tmp_path):
    a = tmp_path / "a.ppm"
    b = tmp_path / "b.ppm"
    for out in (a, b):
        rc = main(["viz", "--field", str(registered / "d.flo"),
                   "--out", str(out), "--max-mag", "2.0"])
        assert rc == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    assert not np.all(formats.read_ppm(a).pixels == 255)


def test_viz_rejects_nonpositive_max_mag(registered, tmp_path):
    rc = main(["viz", "--field", str(registered / "d.flo"),
               "--out", str(tmp_path / "x.ppm"), "--max-mag", "0"])
    assert rc == EXIT_IO


# ---------------------------------------------------------------------------
# bench

def run_bench(dataset, solver_json, out, workers):
    rc = main(["bench", "--dataset", str(dataset),
               "--modes", "physics,direct", "--df-variants", "normalized",
               "--solver-config", solver_json,
               "--out", str(out), "--workers", str(workers)])
    assert rc == EXIT_OK
    with open(out, newline="") as handle:
        return list(csv.reader(handle))


def strip_wall_ms(rows):
    header = rows[0]
    keep = [i for i, name in enumerate(header) if name != "wall_ms"]
    return [[row[i] for i in keep] for row in rows]


def test_bench_csv_shape_and_medians(dataset, solver_json, tmp_path):
    rows = run_bench(dataset, solver_json, tmp_path / "bench.csv", workers=1)
    assert rows[0] == ["pair_id", "mode", "df_variant",
                       "dsc_artery", "dsc_vein", "hd95_artery", "hd95_vein",
                       "ssim", "mse", "neg_mi", "dr_percent", "epe",
                       "wall_ms", "status"]
    body = rows[1:5]
    medians = rows[5:]
    # 2 pairs x 2 modes x 1 variant, sorted by (pair_id, mode, variant)
    assert [(r[0], r[1]) for r in body] == [
        ("0000", "direct"), ("0000", "physics"),
        ("0001", "direct"), ("0001", "physics")]
    assert all(r[-1] == "ok" for r in body)
    assert [(r[0], r[1], r[-1]) for r in medians] == [
        ("MEDIAN", "direct", "median"), ("MEDIAN", "physics", "median")]
    assert all(r[-2] == "" for r in medians)
    for row in body:
        assert float(row[3]) <= 1.0 and float(row[4]) <= 1.0
        assert float(row[8]) >= 0.0
        assert float(row[12]) > 0.0
    # median of two values sits between them
    direct_ssim = sorted(float(r[7]) for r in body if r[1] == "direct")
    assert direct_ssim[0] <= float(medians[0][7]) <= direct_ssim[1]


def test_bench_workers_do_not_change_results(dataset, solver_json, tmp_path):
    one = run_bench(dataset, solver_json, tmp_path / "w1.csv", workers=1)
    two = run_bench(dataset, solver_json, tmp_path / "w2.csv", workers=2)
    assert strip_wall_ms(one) == strip_wall_ms(two)


def test_bench_row_failure_is_recorded(dataset, solver_json, tmp_path):
    broken = tmp_path / "broken"
    run_phantom(broken, seed=5)
    # corrupt one frame; its rows must fail while the rest stay ok
    (broken / "frames" / "frame_0002.pgm").write_bytes(b"P5\nnot a header")
    rows = run_bench(broken, solver_json, tmp_path / "bench.csv", workers=1)
    body = [r for r in rows[1:] if r[0] != "MEDIAN"]
    status = {(r[0], r[1]): r[-1] for r in body}
    assert status[("0000", "physics")] == "ok"
    assert status[("0001", "physics")] == "ValueError"
    failed = next(r for r in body if r[0] == "0001" and r[1] == "physics")
    assert all(cell == "" for cell in failed[3:12])


def test_bench_rejects_unknown_mode(dataset, tmp_path):
    rc = main(["bench", "--dataset", str(dataset), "--modes", "psychic",
               "--out", str(tmp_path / "x.csv")])
    assert rc == EXIT_IO


def test_bench_missing_frame_exits_two(dataset, solver_json, tmp_path):
    broken = tmp_path / "broken"
    run_phantom(broken, seed=5)
    os.remove(broken / "frames" / "frame_0003.pgm")
    rc = main(["bench", "--dataset", str(broken),
               "--modes", "physics", "--df-variants", "normalized",
               "--solver-config", solver_json,
               "--out", str(tmp_path / "x.csv")])
    assert rc == EXIT_IO


def test_worker_cap_honors_environment(monkeypatch):
    monkeypatch.delenv("PADREG_THREADS", raising=False)
    assert _worker_cap(3) == 3
    assert _worker_cap(0) == 1
    monkeypatch.setenv("PADREG_THREADS", "2")
    assert _worker_cap(8) == 2
    assert _worker_cap(1) == 1


# ---------------------------------------------------------------------------
# dispatch

def test_unknown_flag_exits_two(capsys):
    with pytest.raises(SystemExit) as info:
        main(["viz", "--bogus"])
    assert info.value.code == 2
    capsys.readouterr()


def test_missing_subcommand_exits_two(capsys):
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 2
    capsys.readouterr()
