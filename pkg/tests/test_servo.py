import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from autodissect.perception import InstrumentKeypoints, Keypoint, SceneNoise, random_scene, render_scene
from autodissect.planner import BoundaryTrajectory, build_trajectory
from autodissect.servo import (
    ControllerConfig,
    ControllerState,
    FaultyActuator,
    RunLog,
    SimulatedActuator,
    SimulationConfig,
    arrival_summary,
    control_step,
    deliver_energy,
    estimate_tip,
    run_episode,
)
from autodissect.stereo import DisparityMap, PointCloud, disparity_to_cloud

CFG = ControllerConfig()
EXACT = SimulationConfig(actuation_noise_mm=0.0, disparity_step_px=0.0)


def line_traj(n=3):
    pts = np.array([[0.001 * i, 0.0, 0.1] for i in range(n)])
    return BoundaryTrajectory(np.c_[np.arange(n), np.zeros(n)], pts)


@pytest.fixture(scope="module")
def planned(rig):
    scene = random_scene(4, rig)
    fr = render_scene(scene)
    traj = build_trajectory(fr.segmentation, fr.disparity, disparity_to_cloud(fr.disparity, rig), k=6)
    return scene, traj


@pytest.mark.parametrize("kw", [dict(step_mm=0), dict(switch_threshold_mm=-1), dict(perception_loss_patience=0),
                                dict(min_confidence=1.5)])
def test_config_invariants(kw):
    with pytest.raises(ValueError):
        ControllerConfig(**kw)


def test_step_toward_goal():
    traj = line_traj()
    tip = traj.waypoints_3d[0] - [0.002, 0, 0]
    disp, nxt = control_step(ControllerState(), tip, traj, CFG)
    assert np.allclose(disp, [0.0005, 0, 0], atol=1e-15)
    assert nxt.phase == "seeking" and nxt.iteration == 1


def test_close_tip_switches_to_delivery():
    traj = line_traj()
    disp, nxt = control_step(ControllerState(), traj.waypoints_3d[0] + [0.0003, 0, 0], traj, CFG)
    assert not np.any(disp) and nxt.phase == "delivering"


def test_two_step_approach():
    traj = line_traj()
    tip = traj.waypoints_3d[0] + [0, 0.0007, 0]
    disp, s = control_step(ControllerState(), tip, traj, CFG)
    assert np.isclose(np.linalg.norm(disp), 0.0005)
    disp2, s = control_step(s, tip + disp, traj, CFG)
    assert s.phase == "delivering" and not np.any(disp2)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-0.01, 0.01), min_size=3, max_size=3))
def test_never_overshoots(offset):
    traj = line_traj()
    tip = traj.waypoints_3d[0] + np.array(offset)
    disp, nxt = control_step(ControllerState(), tip, traj, CFG)
    dist = np.linalg.norm(traj.waypoints_3d[0] - tip)
    assert np.linalg.norm(disp) <= dist + 1e-15
    assert np.linalg.norm(disp) <= CFG.step_mm * 1e-3 + 1e-15


def test_perception_loss_patience():
    traj = line_traj()
    s = ControllerState()
    for i in range(CFG.perception_loss_patience):
        disp, s = control_step(s, None, traj, CFG)
        assert s.phase == "seeking" and s.loss_counter == i + 1 and not np.any(disp)
    _, s = control_step(s, None, traj, CFG)
    assert s.phase == "aborted"


def test_control_step_requires_seeking():
    with pytest.raises(ValueError):
        control_step(ControllerState(phase="delivering"), np.zeros(3), line_traj(), CFG)


def test_energy_delivery_events():
    act = SimulatedActuator()
    ev, s = deliver_energy(act, 200, ControllerState(phase="delivering"), 3, 1000.0)
    assert ev == {"waypoint": 0, "start_ms": 1000.0, "duration_ms": 200.0, "ok": True}
    assert s.phase == "seeking" and s.active_waypoint_index == 1 and act.pulses == [200.0]
    _, s = deliver_energy(act, 200, ControllerState(active_waypoint_index=2, phase="delivering"), 3)
    assert s.phase == "done"


def test_actuator_fault_aborts():
    ev, s = deliver_energy(FaultyActuator(), 200, ControllerState(phase="delivering"), 3)
    assert s.phase == "aborted" and not ev["ok"] and "fault" in ev


def test_estimate_tip_cases(rig):
    tip = np.array([0.003, -0.002, 0.095])
    fr = render_scene(random_scene(1, rig), tip)
    cloud = disparity_to_cloud(fr.disparity, rig)
    est = estimate_tip(fr.keypoints, cloud, CFG)
    assert np.linalg.norm(est - tip) < 1e-9
    # quantised disparity stays within half a millimeter
    q = DisparityMap(np.round(fr.disparity.values * 16) / 16)
    assert np.linalg.norm(estimate_tip(fr.keypoints, disparity_to_cloud(q, rig), CFG) - tip) < 0.5e-3
    unsure = InstrumentKeypoints({"tip_right": Keypoint(320, 240, 0.1)})
    assert estimate_tip(unsure, cloud, CFG) is None
    blank = PointCloud(np.full(cloud.points.shape, np.nan), np.zeros(cloud.shape, bool))
    assert estimate_tip(fr.keypoints, blank, CFG) is None
    assert estimate_tip(InstrumentKeypoints({}), cloud, CFG) is None


def test_noiseless_episode(planned):
    scene, traj = planned
    log = run_episode(scene, traj, CFG, EXACT)
    assert log.outcome == "done"
    assert [a["waypoint"] for a in log.arrivals] == list(range(len(traj)))
    assert len(log.energy_events) == len(traj)
    assert np.all(log.arrival_errors_mm() < CFG.switch_threshold_mm)
    for w in range(len(traj)):
        d = [r["true_distance_mm"] for r in log.iterations if r["waypoint"] == w]
        assert np.all(np.diff(d) < 0)


def test_noisy_episode_completes(planned):
    scene, traj = planned
    log = run_episode(scene, traj, CFG, SimulationConfig(keypoint_noise_px=2.0, seed=3))
    assert log.outcome == "done"
    s = log.summary()
    assert s["count"] == len(traj) and s["std_mm"] >= 0


def test_dropout_aborts_with_partial_log(planned):
    scene, traj = planned
    blind = type(scene)(**{**scene.__dict__, "noise": SceneNoise(dropout_prob=1.0)})
    log = run_episode(blind, traj, CFG, EXACT)
    assert log.outcome == "aborted" and "perception" in log.abort_reason
    assert len(log.iterations) == CFG.perception_loss_patience + 1
    assert not log.arrivals


def test_episode_is_deterministic(planned, tmp_path):
    scene, traj = planned
    sim = SimulationConfig(keypoint_noise_px=2.0, seed=9)
    a = run_episode(scene, traj, CFG, sim)
    b = run_episode(scene, traj, CFG, sim)
    assert a.to_json() == b.to_json()
    a.write_json(tmp_path / "runlog.json")
    back = RunLog.read_json(tmp_path / "runlog.json")
    assert back.to_json() == a.to_json()


def test_runlog_schema_rejects_garbage():
    with pytest.raises(ValueError):
        RunLog.from_dict({"iterations": [], "arrivals": [], "energy_events": [], "outcome": "maybe"})
    with pytest.raises(ValueError):
        RunLog.from_dict(json.loads('{"iterations": [{"iteration": 0}], "arrivals": [], '
                                    '"energy_events": [], "outcome": "done"}'))


def test_arrival_statistics():
    s = arrival_summary([0.2, 0.3, 0.4])
    assert abs(s["mean_mm"] - 0.3) < 1e-12
    assert abs(s["std_mm"] - np.sqrt(2 / 300)) < 1e-12
    assert round(s["std_mm"], 4) == 0.0816
    with pytest.raises(ValueError):
        arrival_summary([])
