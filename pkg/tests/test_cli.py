import json
import os

import pytest

from conftest import NOISELESS, SHORT_ROUTE
from svloc.cli import EXIT_INPUT, EXIT_NO_LOCALIZATION, EXIT_OK, EXIT_SOLVER, MANIFEST, main
from svloc.geo import GeoPoint, enu_to_gps, haversine_m
from svloc.io import read_json, read_truth, tree_digest
from svloc.pipeline import evaluate

NOISELESS_SPEC = dict(seed=3, waypoints=SHORT_ROUTE, n_panoramas=3, **NOISELESS)


def write_spec(path, spec):
    with open(path, "w") as fh:
        json.dump(spec, fh)
    return str(path)


@pytest.fixture(scope="module")
def noiseless_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("noiseless")
    ds, out = str(root / "ds"), str(root / "out")
    assert main(["simulate", write_spec(root / "spec.json", NOISELESS_SPEC), ds]) == EXIT_OK
    assert main(["localize", ds, out]) == EXIT_OK
    return ds, out


# --------------------------------------------------------------- simulate


def test_bundled_spec_writes_a_dataset(tmp_path):
    out = tmp_path / "ds"
    assert main(["simulate", "parkinglot", str(out)]) == EXIT_OK
    names = set(os.listdir(out))
    assert {"camera.json", "frames.jsonl", "odometry.jsonl", "ground_truth.json", "panos", MANIFEST} <= names
    assert len(os.listdir(out / "panos")) == 2 * 9
    with open(out / "frames.jsonl") as fh:
        assert sum(1 for _ in fh) == len(read_truth(out / "ground_truth.json").poses)


def test_same_seed_gives_identical_digests(tmp_path):
    spec = write_spec(tmp_path / "s.json", dict(seed=7, n_landmarks=50, waypoints=SHORT_ROUTE, n_panoramas=2))
    for d in ("a", "b"):
        assert main(["simulate", spec, str(tmp_path / d)]) == EXIT_OK
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
    assert main(["simulate", spec, str(tmp_path / "c"), "--seed", "8"]) == EXIT_OK
    assert tree_digest(tmp_path / "a") != tree_digest(tmp_path / "c")


@pytest.mark.parametrize("spec, field", [
    ({"seed": 1, "pixel_sigma": -2.0}, "pixel_sigma"),
    ({"seed": 1, "colour": "red"}, "colour"),
    ({"seed": 1, "landmark_band": [30, 10]}, "landmark_band"),
])
def test_malformed_spec_names_the_field(tmp_path, capsys, spec, field):
    assert main(["simulate", write_spec(tmp_path / "bad.json", spec), str(tmp_path / "out")]) == EXIT_INPUT
    assert field in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_unknown_spec_name(tmp_path):
    assert main(["simulate", "no-such-spec", str(tmp_path / "out")]) == EXIT_INPUT


def test_spec_must_be_an_object(tmp_path):
    assert main(["simulate", write_spec(tmp_path / "list.json", [1, 2]), str(tmp_path / "out")]) == EXIT_INPUT


# --------------------------------------------------------------- localize


def test_noiseless_localization_matches_gps_truth(noiseless_run):
    ds, out = noiseless_run
    loc = read_json(os.path.join(out, "localization.json"))
    gt = read_truth(os.path.join(ds, "ground_truth.json"))
    assert len(loc["cameras"]) == len(gt.camera_gps)
    err = [haversine_m(GeoPoint(c["lat_deg"], c["lon_deg"]), GeoPoint(*g)) for c, g in zip(loc["cameras"], gt.camera_gps)]
    assert max(err) < 1e-6
    for pid, rig in gt.pano_rigs.items():
        e, n, _ = gt.enu_from_traj.transform(rig.t)
        g = loc["panoramas"]["connected"][pid]["gps"]
        assert haversine_m(GeoPoint(g["lat_deg"], g["lon_deg"]), enu_to_gps(gt.ref, e, n)) < 1e-6


def test_localize_writes_manifest_with_full_config(noiseless_run):
    _, out = noiseless_run
    m = read_json(os.path.join(out, MANIFEST))
    assert m["command"] == "localize"
    assert m["config"]["ratio"] == 0.7 and m["seed"] == 0
    assert "out" not in m


def test_dataset_without_panoramas_exits_3(tmp_path):
    spec = write_spec(tmp_path / "s.json", dict(seed=1, n_landmarks=60, waypoints=SHORT_ROUTE, n_panoramas=0))
    assert main(["simulate", spec, str(tmp_path / "ds")]) == EXIT_OK
    assert main(["localize", str(tmp_path / "ds"), str(tmp_path / "out")]) == EXIT_NO_LOCALIZATION
    assert not (tmp_path / "out" / "localization.json").exists()


def test_no_surviving_track_exits_4(noiseless_run, tmp_path, capsys):
    ds, _ = noiseless_run
    assert main(["localize", ds, str(tmp_path / "out"), "--set", "depth_max=1"]) == EXIT_SOLVER
    assert "EmptyProblem" in capsys.readouterr().err


@pytest.mark.parametrize("override", ["ratioo=0.5", "ratio=2", "ratio", "georef_mode=\"both\""])
def test_bad_override_exits_2(noiseless_run, tmp_path, override):
    ds, _ = noiseless_run
    assert main(["localize", ds, str(tmp_path / "out"), "--set", override]) == EXIT_INPUT


def test_config_file_and_override(noiseless_run, tmp_path):
    ds, _ = noiseless_run
    cfg = write_spec(tmp_path / "cfg.json", {"top_k": 5, "seed": 4})
    out = tmp_path / "out"
    assert main(["localize", ds, str(out), "--config", cfg, "--set", "seed=9"]) == EXIT_OK
    m = read_json(out / MANIFEST)
    assert m["config"]["top_k"] == 5 and m["config"]["seed"] == 9


# --------------------------------------------------------------- evaluate


def test_evaluate_noiseless_run(noiseless_run, capsys):
    _, out = noiseless_run
    assert main(["evaluate", out]) == EXIT_OK
    table = capsys.readouterr().out
    assert "independent" in table and "connected" in table and "median_m" in table
    metrics = read_json(os.path.join(out, "evaluation", "metrics.json"))
    assert 1.0 in metrics["thresholds_m"] and 1.5 in metrics["thresholds_m"]
    assert metrics["thresholds_m"][0] == 0.25 and metrics["thresholds_m"][-1] == 5.0
    for mode in ("independent", "connected"):
        s = metrics["summary"][mode]
        assert s["n"] == 3 and s["median_m"] < 1e-6 and s["within_1m"] == 1.0
    assert os.path.exists(os.path.join(out, "evaluation", "cumulative.txt"))


def test_perfect_estimates_give_a_step_at_zero(noiseless_run):
    ds, out = noiseless_run
    gt = read_truth(os.path.join(ds, "ground_truth.json"))
    loc = read_json(os.path.join(out, "localization.json"))
    for mode in ("independent", "connected"):
        for pid, d in loc["panoramas"][mode].items():
            d["rig"] = gt.pano_rigs[pid].to_dict()
            d["views"] = {k: gt.pano_rigs[pid].to_dict() for k in d["views"]}
    for c, (lat, lon) in zip(loc["cameras"], gt.camera_gps):
        c["lat_deg"], c["lon_deg"] = lat, lon
    m = evaluate(loc, gt)
    for mode in ("independent", "connected"):
        assert set(m["panoramas"][mode].values()) == {0.0}
        assert set(m["summary"][mode]["cumulative"].values()) == {1.0}
    assert m["cameras"]["max_m"] == 0.0


def test_evaluate_counts_unlocalized_panoramas(noiseless_run):
    ds, out = noiseless_run
    gt = read_truth(os.path.join(ds, "ground_truth.json"))
    loc = read_json(os.path.join(out, "localization.json"))
    del loc["panoramas"]["independent"]["p01"]
    m = evaluate(loc, gt)
    assert m["localized_fraction"] == {"independent": pytest.approx(2 / 3), "connected": 1.0}


def test_missing_truth_exits_2(noiseless_run, tmp_path):
    _, out = noiseless_run
    assert main(["evaluate", out, "--truth", str(tmp_path / "nope.json"), "--out", str(tmp_path / "e")]) == EXIT_INPUT
    bare = tmp_path / "bare"
    bare.mkdir()
    with open(os.path.join(out, "localization.json")) as src, open(bare / "localization.json", "w") as dst:
        dst.write(src.read())
    assert main(["evaluate", str(bare)]) == EXIT_INPUT


# ----------------------------------------------------------- oracle, replay


def test_oracle_command(noiseless_run, tmp_path, capsys):
    ds, _ = noiseless_run
    out = tmp_path / "orc"
    assert main(["oracle", ds, str(out), "-n", "1"]) == EXIT_OK
    report = read_json(out / "oracle.json")
    assert len(report["triangulation"]) == 1 and len(report["pose"]) == 1
    # noiseless bearings: both optimizers land on the truth
    assert report["triangulation"][0]["disagreement_m"] <= 0.02
    assert report["pose"][0]["disagreement_m"] <= 0.02
    assert "worst oracle/LM disagreement" in capsys.readouterr().out


def test_replay_reproduces_simulate_and_localize(noiseless_run, tmp_path):
    ds, out = noiseless_run
    assert main(["replay", os.path.join(ds, MANIFEST), "--out", str(tmp_path / "ds")]) == EXIT_OK
    assert tree_digest(tmp_path / "ds") == tree_digest(ds)
    assert main(["replay", os.path.join(out, MANIFEST), "--out", str(tmp_path / "out")]) == EXIT_OK
    assert tree_digest(tmp_path / "out") == [x for x in tree_digest(out) if not x[0].startswith("evaluation")]


def test_replay_rejects_unknown_command(tmp_path):
    path = write_spec(tmp_path / MANIFEST, {"command": "paint"})
    assert main(["replay", path]) == EXIT_INPUT


def test_no_subcommand_is_a_usage_error():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2

