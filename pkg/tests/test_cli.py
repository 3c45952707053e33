import json

import numpy as np
import pytest

from autodissect.cli import EXIT_CONFIG, EXIT_OK, EXIT_STAGE, bundled, main
from autodissect.report import calibration_table, format_calibration_table


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def sweep(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    assert run("gen-sweep", "--steps", 5, "--heldout", 4, "--out", out / "sweep.jsonl") == EXIT_OK
    return out


def lines(path):
    return [json.loads(x) for x in path.read_text().splitlines() if x.strip()]


def test_gen_sweep_counts(sweep):
    recs = lines(sweep / "sweep.jsonl")
    assert sum(r["arm"] == "tool" for r in recs) == 6 * 5
    assert sum(r["arm"] == "camera" for r in recs) == 4 * 5
    assert all(r["frames_averaged"] == 10 for r in recs)
    assert len(lines(sweep / "heldout.jsonl")) == 2 * 4
    assert (sweep / "world.json").is_file() and (sweep / "frames.json").is_file()


def test_calibrate_and_report(sweep, capsys):
    out = sweep / "calibration.json"
    status = run("calibrate", "--dataset", sweep / "sweep.jsonl", "--frames", sweep / "frames.json",
                 "--heldout", sweep / "heldout.jsonl", "--restarts", 2, "--out", out)
    assert status == EXIT_OK
    cal = json.loads(out.read_text())
    assert "runtime_s" not in cal and cal["heldout"]["records"] == 8
    assert "uncalibrated" in capsys.readouterr().out
    assert run("report", "--calibration", out, "--out", sweep / "summary.json") == EXIT_OK
    table = json.loads((sweep / "summary.json").read_text())["calibration"]
    assert table["source"] == "heldout" and len(table["reduction_factor"]) == 3


def test_zero_error_table():
    zeros = [0.0, 0.0, 0.0]
    table = calibration_table({"heldout": {"before_mean_mm": zeros, "before_std_mm": zeros,
                                           "after_mean_mm": zeros, "after_std_mm": zeros}})
    assert table["before_mean_mm"] == zeros and table["after_mean_mm"] == zeros
    assert table["reduction_factor"] == [1.0, 1.0, 1.0]
    assert "0.000 ± 0.000" in format_calibration_table(table)


def test_report_arrival_stats(tmp_path, capsys):
    arrivals = [{"waypoint": i, "iteration": 3 * i, "estimated_error_mm": e, "error_mm": e}
                for i, e in enumerate([0.2, 0.3, 0.4])]
    log = {"iterations": [], "arrivals": arrivals, "energy_events": [], "outcome": "done", "abort_reason": None,
           "config": {}}
    (tmp_path / "runlog.json").write_text(json.dumps(log))
    assert run("report", "--runlog", tmp_path / "runlog.json", "--out", tmp_path / "s.json") == EXIT_OK
    assert "0.300 ± 0.082 mm" in capsys.readouterr().out
    rep = json.loads((tmp_path / "s.json").read_text())["arrivals"]
    assert rep["mean_mm"] == pytest.approx(0.3) and rep["std_mm"] == pytest.approx(0.0816, abs=1e-4)


def test_report_empty_runlog(tmp_path, capsys):
    log = {"iterations": [], "arrivals": [], "energy_events": [], "outcome": "aborted",
           "abort_reason": "perception lost", "config": {}}
    (tmp_path / "runlog.json").write_text(json.dumps(log))
    assert run("report", "--runlog", tmp_path / "runlog.json") != EXIT_OK
    assert "no arrivals" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    ["reconstruct", "--left", "nope.png", "--right", "nope.png", "--rig", "missing_rig.json"],
    ["plan", "--annotations", "nope.json", "--disparity", "nope.png"],
    ["run-sim", "--trajectory", "nope.json"],
    ["report"],
    ["calibrate", "--dataset", "nope.jsonl"],
])
def test_missing_inputs_are_config_errors(tmp_path, monkeypatch, argv):
    monkeypatch.chdir(tmp_path)
    assert run(*argv) == EXIT_CONFIG


def test_malformed_config_is_config_error(tmp_path):
    (tmp_path / "rig.json").write_text("{not json")
    (tmp_path / "bad_rig.json").write_text(json.dumps({"focal_px": -1}))
    for rig in ("rig.json", "bad_rig.json"):
        assert run("plan", "--annotations", "x", "--disparity", "y", "--rig", tmp_path / rig) == EXIT_CONFIG


@pytest.fixture(scope="module")
def rendered(tmp_path_factory):
    out = tmp_path_factory.mktemp("scene")
    assert run("render", "--out-dir", out) == EXIT_OK
    return out


def test_render_outputs(rendered):
    for name in ("left.png", "right.png", "gt_disparity.png", "annotations.json"):
        assert (rendered / name).is_file()
    coco = json.loads((rendered / "annotations.json").read_text())
    assert {c["name"] for c in coco["categories"]} >= {"gallbladder", "liver"}


def test_plan_and_simulate(rendered):
    out = rendered
    status = run("plan", "--annotations", out / "annotations.json", "--disparity", out / "gt_disparity.png",
                 "--out", out / "traj.json")
    assert status == EXIT_OK
    traj = json.loads((out / "traj.json").read_text())
    assert len(traj["waypoints_3d"]) == 6
    assert (out / "traj.csv").is_file() and (out / "traj_overlay.png").is_file()
    assert run("run-sim", "--trajectory", out / "traj.json", "--out", out / "runlog.json") == EXIT_OK
    log = json.loads((out / "runlog.json").read_text())
    assert log["outcome"] == "done" and len(log["energy_events"]) == 6


def test_aborted_episode_exits_with_stage_error(rendered, tmp_path):
    scene = json.loads(bundled("scene.json").read_text())
    scene.setdefault("noise", {})["dropout_prob"] = 1.0
    (tmp_path / "scene.json").write_text(json.dumps(scene))
    status = run("run-sim", "--scene", tmp_path / "scene.json", "--trajectory", rendered / "traj.json",
                 "--out", tmp_path / "runlog.json")
    assert status == EXIT_STAGE
    log = json.loads((tmp_path / "runlog.json").read_text())
    assert log["outcome"] == "aborted" and log["iterations"]
