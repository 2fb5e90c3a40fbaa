import json

import numpy as np
import pytest

from posefusion import io as pio
from posefusion.cli import main
from posefusion.fusion import GridSpec, ModelParams
from posefusion.geometry import Homography, reference_rig
from posefusion.simulate import ScenarioConfig


@pytest.fixture
def config(tmp_path):
    scen = ScenarioConfig(duration=20.0).to_dict()
    (tmp_path / "scenario.json").write_text(json.dumps(scen))
    cfg = {
        "seed": 5,
        "scenario": "scenario.json",
        "fo_fraction": 0.1,
        "n_seeds": 2,
        "sweep": {"train_size": 300, "test_size": 2000},
    }
    path = tmp_path / "pipeline.json"
    path.write_text(json.dumps(cfg))
    return path


def run(*args):
    return main([str(a) for a in args])


def test_full_pipeline(config, tmp_path):
    out = tmp_path / "out"
    assert run("run", "--config", config, "--out", out) == 0
    for name in (
        "ground_truth.jsonl",
        "detections.jsonl",
        "features.jsonl",
        "homography.json",
        "ground_detections.jsonl",
        "tracks.jsonl",
        "model.json",
        "model_nb.json",
        "scores.jsonl",
        "table.csv",
        "pr.csv",
        "manifest.json",
    ):
        assert (out / name).exists(), name
    lines = (out / "table.csv").read_text().strip().split("\n")
    assert lines[0] == "fraction,method,f1_mean,f1_std,ap_mean,ap_std,n_seeds"
    rows = [line.split(",") for line in lines[1:]]
    assert [(r[0], r[1]) for r in rows] == [
        (f, m) for f in ("0.0200", "0.2000", "0.8000") for m in ("NB", "NB-SEM")
    ]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 5
    assert manifest["outputs"]["table.csv"] == pio.file_digest(out / "table.csv")


def test_tracks_follow_ground_truth(config, tmp_path):
    out = tmp_path / "out"
    assert run("run", "--config", config, "--out", out, "--stages", "simulate,calibrate,lift,track") == 0
    truth = {r["t"]: r for r in pio.read_jsonl(out / "ground_truth.jsonl")}
    errors = []
    for rec in pio.read_jsonl(out / "tracks.jsonl"):
        if rec["t"] < 1.0 or not rec["tracks"]:
            continue
        ops = np.array([o["position"] for o in truth[rec["t"]]["operators"]])
        for tr in rec["tracks"]:
            errors.append(np.linalg.norm(ops - [tr["x"], tr["y"]], axis=1).min())
    assert len(errors) > 100
    assert np.median(errors) < 0.25


def test_determinism(config, tmp_path):
    for name in ("a", "b"):
        assert run("run", "--config", config, "--out", tmp_path / name, "--stages", "simulate,fit,eval") == 0
    assert (tmp_path / "a" / "table.csv").read_bytes() == (tmp_path / "b" / "table.csv").read_bytes()


def test_missing_dependency_exit_code(tmp_path):
    assert run("run", "--seed", 1, "--out", tmp_path / "x", "--stages", "track") == 3


def test_missing_seed_is_config_error(tmp_path):
    assert run("run", "--out", tmp_path / "x", "--stages", "simulate") == 2


def test_unknown_stage(tmp_path):
    assert run("run", "--seed", 1, "--out", tmp_path, "--stages", "bogus") == 2


def test_missing_input_file(tmp_path):
    assert run("track", "--input", tmp_path / "nope.jsonl") == 2


def test_subcommands_chain(config, tmp_path):
    sim = tmp_path / "sim"
    assert run("simulate", "--config", tmp_path / "scenario.json", "--seed", 2, "--out", sim) == 0
    hom = tmp_path / "hom.json"
    assert run("calibrate", "--points", sim / "calibration_points.json", "--out", hom) == 0
    ground = tmp_path / "ground.jsonl"
    assert run("lift", "--homography", hom, "--input", sim / "detections.jsonl", "--out", ground) == 0
    assert run("track", "--input", ground, "--out", tmp_path / "tracks.jsonl") == 0
    feats = list(pio.read_jsonl(sim / "features.jsonl"))
    pio.write_jsonl(tmp_path / "lab.jsonl", feats[:60])
    pio.write_jsonl(tmp_path / "unl.jsonl", [{k: v for k, v in f.items() if k != "label"} for f in feats[60:]])
    model = tmp_path / "model.json"
    assert run("fit", "--labeled", tmp_path / "lab.jsonl", "--unlabeled", tmp_path / "unl.jsonl", "--out", model) == 0
    scores = tmp_path / "scores.jsonl"
    assert run("predict", "--model", model, "--input", sim / "features.jsonl", "--out", scores) == 0
    recs = list(pio.read_jsonl(scores))
    assert len(recs) == len(feats)
    assert all(0 <= r["score"] <= 1 for r in recs)
    assert run("eval", "pr", "--input", scores, "--out", tmp_path / "pr.csv") == 0
    assert (tmp_path / "pr.csv").read_text().startswith("threshold,precision,recall")


def test_collinear_calibration_exit_code(tmp_path):
    pts = [{"image": [i, i], "ground": [i, i]} for i in range(6)]
    (tmp_path / "c.json").write_text(json.dumps({"format_version": 1, "correspondences": pts, "sigma_c": 1.0}))
    assert run("calibrate", "--points", tmp_path / "c.json", "--out", tmp_path / "h.json") == 4


# --- file formats ---------------------------------------------------------------


def test_homography_round_trip(tmp_path):
    rig = reference_rig()
    hom = Homography(rig.ground_homography(), np.eye(9) * 1e-8)
    pio.save_homography(tmp_path / "h.json", hom, rig)
    hom2, rig2 = pio.load_homography(tmp_path / "h.json")
    np.testing.assert_array_equal(hom2.H, hom.H)
    np.testing.assert_array_equal(hom2.cov, hom.cov)
    np.testing.assert_array_equal(rig2.virtual_rotation, rig.virtual_rotation)


def test_model_round_trip(tmp_path):
    p = ModelParams(0.2, [1.5, 2], [3, 0.5], np.full((2, 16), 1 / 16), [0.1, -0.3], [0.4, 0.2], GridSpec.uniform((0, 4), (-1, 1)))
    pio.save_model(tmp_path / "m.json", p)
    q = pio.load_model(tmp_path / "m.json")
    np.testing.assert_array_equal(p.vector(), q.vector())
    np.testing.assert_array_equal(p.grid.x_edges, q.grid.x_edges)


def test_feature_records_round_trip(tmp_path):
    from posefusion.fusion import FeatureSet

    fs = FeatureSet([0.1, 0.9], [[0, 1], [2, 3]], [0.5, -0.5], [1, -1])
    pio.write_jsonl(tmp_path / "f.jsonl", pio.feature_records(fs))
    back = pio.load_features(tmp_path / "f.jsonl")
    np.testing.assert_array_equal(back.label, fs.label)
    np.testing.assert_array_equal(back.f_xy, fs.f_xy)


def test_bad_json_is_config_error(tmp_path):
    (tmp_path / "bad.jsonl").write_text("{not json}\n")
    assert run("track", "--input", tmp_path / "bad.jsonl", "--out", tmp_path / "t.jsonl") == 2
