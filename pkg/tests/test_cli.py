import argparse
import json
import subprocess
import sys

import numpy as np
import pytest

from pose6d import io_formats as io
from pose6d.cli import build_parser, main
from pose6d.geometry import PointCloud

CUBE = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    root = tmp_path_factory.mktemp("chain")
    assert main(["synth", "generate", "--out", str(root / "scenes"), "--seed", "3"]) == 0
    assert main(["pose", "fit", "--scene", str(root / "scenes"), "--keypoints", str(root / "scenes" / "keypoints.json"),
                 "--points", "1024", "-o", str(root / "poses.json")]) == 0
    assert main(["eval", "--pred", str(root / "poses.json"), "--gt", str(root / "scenes"),
                 "-o", str(root / "report.csv")]) == 0
    return root


def summary(report):
    rows = [line.split(",") for line in report.read_text().splitlines()]
    return {r[1]: float(r[8]) for r in rows if r[0] == "summary"}


def test_fps_on_cube_corners(tmp_path):
    io.write_bytes(tmp_path / "cube.ply", io.write_ply(PointCloud(CUBE)))
    assert main(["keypoints", "select", "--mesh", str(tmp_path / "cube.ply"), "--algo", "fps", "--n", "4",
                 "-o", str(tmp_path / "kp.json")]) == 0
    (model,) = io.read_keypoint_models_json((tmp_path / "kp.json").read_bytes()).values()
    assert model.object_id == "cube"
    assert len({tuple(p) for p in model.keypoints}) == 4
    assert all(any(np.array_equal(p, c) for c in CUBE) for p in model.keypoints)


def test_fps_too_many_keypoints(tmp_path, capsys):
    io.write_bytes(tmp_path / "cube.ply", io.write_ply(PointCloud(CUBE)))
    code = main(["keypoints", "select", "--mesh", str(tmp_path / "cube.ply"), "--algo", "fps", "--n", "9",
                 "-o", str(tmp_path / "kp.json")])
    assert code == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("error:") and "\n" not in err
    assert not (tmp_path / "kp.json").exists()


def test_sift_fps_needs_colors(tmp_path):
    io.write_bytes(tmp_path / "cube.ply", io.write_ply(PointCloud(CUBE)))
    assert main(["keypoints", "select", "--mesh", str(tmp_path / "cube.ply"), "--algo", "sift-fps",
                 "-o", str(tmp_path / "kp.json")]) == 1


def test_generate_fit_eval_chain(chain):
    s = summary(chain / "report.csv")
    assert s["auc"] == 1.0
    assert s["add01d"] == 1.0
    assert s["mean_add"] < 1e-6


def test_plot(chain, tmp_path):
    assert main(["plot", "--in", str(chain / "report.csv"), "--title", "a < b", "-o", str(tmp_path / "c.svg")]) == 0
    svg = (tmp_path / "c.svg").read_text()
    assert svg.startswith("<svg") and "polyline" in svg and "a &lt; b" in svg
    (tmp_path / "bad.csv").write_text("not,a,report\n")
    assert main(["plot", "--in", str(tmp_path / "bad.csv"), "-o", str(tmp_path / "d.svg")]) == 1


def test_eval_mismatched_ids(chain, tmp_path):
    doc = json.loads((chain / "poses.json").read_text())
    for dets in doc["scenes"].values():
        for d in dets:
            d["class_id"] = 99
    (tmp_path / "bad.json").write_text(json.dumps(doc))
    assert main(["eval", "--pred", str(tmp_path / "bad.json"), "--gt", str(chain / "scenes"),
                 "-o", str(tmp_path / "r.csv")]) == 1
    doc["scenes"] = {"scene_999": []}
    (tmp_path / "bad2.json").write_text(json.dumps(doc))
    assert main(["eval", "--pred", str(tmp_path / "bad2.json"), "--gt", str(chain / "scenes"),
                 "-o", str(tmp_path / "r.csv")]) == 1


def test_eval_bad_metric_and_missing_file(chain, tmp_path):
    assert main(["eval", "--pred", str(chain / "poses.json"), "--gt", str(chain / "scenes"),
                 "--metrics", "add,foo", "-o", str(tmp_path / "r.csv")]) == 1
    assert main(["eval", "--pred", str(tmp_path / "nope.json"), "--gt", str(chain / "scenes"),
                 "-o", str(tmp_path / "r.csv")]) == 1


def test_noisy_fit_still_close(chain, tmp_path):
    assert main(["pose", "fit", "--scene", str(chain / "scenes"), "--keypoints", str(chain / "scenes" / "keypoints.json"),
                 "--points", "1024", "--noise-sigma", "0.005", "--outliers", "0.1", "--seed", "1",
                 "-o", str(tmp_path / "poses.json")]) == 0
    assert main(["eval", "--pred", str(tmp_path / "poses.json"), "--gt", str(chain / "scenes"),
                 "-o", str(tmp_path / "r.csv")]) == 0
    assert summary(tmp_path / "r.csv")["auc"] > 0.8


def test_commands_are_idempotent(chain, tmp_path):
    assert main(["synth", "generate", "--out", str(tmp_path / "again"), "--seed", "3"]) == 0
    for f in sorted((chain / "scenes").rglob("*")):
        if f.is_file():
            assert (tmp_path / "again" / f.relative_to(chain / "scenes")).read_bytes() == f.read_bytes()
    assert main(["pose", "fit", "--scene", str(chain / "scenes"), "--keypoints", str(chain / "scenes" / "keypoints.json"),
                 "--points", "1024", "-o", str(tmp_path / "poses.json")]) == 0
    assert (tmp_path / "poses.json").read_bytes() == (chain / "poses.json").read_bytes()
    for name in ("a", "b"):
        assert main(["train-toy", "--steps", "2", "--scenes", "1", "-o", str(tmp_path / f"{name}.csv")]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_train_toy_divergence_exit_code(tmp_path):
    assert main(["train-toy", "--steps", "20", "--scenes", "1", "--lr", "1e12", "-o", str(tmp_path / "t.csv")]) == 2


def test_train_toy_config_and_params(tmp_path):
    from pose6d.fusion.network import FusionConfig, parameter_shapes

    cfg = FusionConfig(enable_decode_fusion=False)
    (tmp_path / "cfg.json").write_text(io.write_fusion_config_json(cfg))
    assert main(["train-toy", "--steps", "1", "--scenes", "1", "--config", str(tmp_path / "cfg.json"),
                 "--params-out", str(tmp_path / "p.json"), "-o", str(tmp_path / "t.csv")]) == 0
    params = io.read_parameters_json((tmp_path / "p.json").read_bytes())
    assert {k: v.shape for k, v in params.items()} == parameter_shapes(cfg)
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "step,loss"
    (tmp_path / "cfg.json").write_text('{"format_version": 1, "k_r2p": 0}')
    assert main(["train-toy", "--steps", "1", "--config", str(tmp_path / "cfg.json"), "-o", str(tmp_path / "t.csv")]) == 1


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--seed", "0"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "max rel. err" in out


def _commands(parser, prefix=()):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for name, sub in action.choices.items():
                yield from _commands(sub, prefix + (name,))
    yield prefix, parser


@pytest.mark.parametrize("path,parser", list(_commands(build_parser())), ids=lambda x: " ".join(x) if isinstance(x, tuple) else "")
def test_help_documents_every_flag(path, parser, capsys):
    assert main(list(path) + ["--help"]) == 0
    text = capsys.readouterr().out
    for action in parser._actions:
        for opt in action.option_strings:
            assert opt in text


def test_unknown_flags_and_commands():
    assert main(["gradcheck", "--bogus"]) == 1
    assert main(["frobnicate"]) == 1
    assert main([]) == 1


def test_json_record(capsys, tmp_path):
    code = main(["--json", "plot", "--in", str(tmp_path / "missing.csv"), "-o", str(tmp_path / "x.svg")])
    assert code == 1
    rec = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert rec["exit_code"] == 1 and rec["command"] == "plot"


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "pose6d", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "keypoints" in res.stdout
