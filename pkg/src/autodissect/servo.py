"""Position-based visual servoing toward boundary waypoints with energy delivery.

The loop is perceive -> estimate tip -> step toward the active waypoint ->
(deliver energy, advance). Distances in the config are millimeters;
positions and displacements are meters in the left camera frame.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .perception import InstrumentKeypoints, SceneRenderer, SyntheticScene
from .planner import BoundaryTrajectory
from .stereo import DisparityMap, PointCloud, cloud_lookup, disparity_to_cloud

PHASES = ("seeking", "delivering", "done", "aborted")
MM = 1e-3


class ActuatorFault(RuntimeError):
    pass


@dataclass(frozen=True)
class ControllerConfig:
    step_mm: float = 0.5
    switch_threshold_mm: float = 0.5
    min_confidence: float = 0.5
    max_iterations_per_waypoint: int = 200
    perception_loss_patience: int = 5
    energy_duration_ms: float = 200.0
    loop_period_ms: float = 50.0
    tip_keypoint: str = "tip_right"
    lookup_window_px: int = 2

    def __post_init__(self):
        if not self.step_mm > 0:
            raise ValueError("step_mm must be positive")
        if not self.switch_threshold_mm > 0:
            raise ValueError("switch_threshold_mm must be positive")
        if not 0.0 <= self.min_confidence <= 1.0:
            raise ValueError("min_confidence must be in [0, 1]")
        if self.perception_loss_patience < 1:
            raise ValueError("perception_loss_patience must be >= 1")
        if self.max_iterations_per_waypoint < 1:
            raise ValueError("max_iterations_per_waypoint must be >= 1")
        if self.energy_duration_ms <= 0:
            raise ValueError("energy_duration_ms must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ControllerConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown controller fields: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class ControllerState:
    active_waypoint_index: int = 0
    tip_3d_estimate: np.ndarray | None = None
    iteration: int = 0
    phase: str = "seeking"
    loss_counter: int = 0
    waypoint_iterations: int = 0
    abort_reason: str | None = None

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ValueError(f"unknown phase {self.phase!r}")


def estimate_tip(keypoints: InstrumentKeypoints, cloud: PointCloud, config: ControllerConfig | None = None):
    """3D tip from the hook-tip keypoint, or None when unseen, unsure or unliftable.

    Depth is the window median of the cloud; X and Y back-project the subpixel
    keypoint at that depth, so a fronto-parallel tip is recovered exactly.
    """
    cfg = config or ControllerConfig()
    kp = keypoints.get(cfg.tip_keypoint)
    if kp is None or not kp.in_frame or kp.confidence < cfg.min_confidence:
        return None
    h, w = cloud.shape
    if not (0 <= round(kp.x) < w and 0 <= round(kp.y) < h):
        return None
    p = cloud_lookup(cloud, (kp.x, kp.y), cfg.lookup_window_px)
    if p is None:
        return None
    u0, v0 = round(kp.x), round(kp.y)
    z = float(p[2])
    fx = _focal_from_cloud(cloud, u0, v0) if cloud.valid[v0, u0] else None
    if fx is None:
        return np.asarray(p, dtype=np.float64)
    # ray through the subpixel keypoint, scaled to the window depth
    x0, y0, z0 = cloud.points[v0, u0]
    return np.array([(x0 / z0 + (kp.x - u0) / fx) * z, (y0 / z0 + (kp.y - v0) / fx) * z, z])


def _focal_from_cloud(cloud: PointCloud, u: int, v: int):
    """Focal length implied by neighbouring columns (X/Z changes by 1/f per pixel)."""
    h, w = cloud.shape
    for du in (1, -1):
        uu = u + du
        if 0 <= uu < w and cloud.valid[v, uu] and cloud.valid[v, u]:
            a = cloud.points[v, u]
            b = cloud.points[v, uu]
            slope = (b[0] / b[2] - a[0] / a[2]) / du
            if slope > 0:
                return 1.0 / slope
    return None


def control_step(state: ControllerState, tip_estimate, trajectory: BoundaryTrajectory,
                 config: ControllerConfig) -> tuple[np.ndarray, ControllerState]:
    """One servo decision. Returns (displacement in meters, next state)."""
    if state.phase != "seeking":
        raise ValueError(f"control_step needs phase 'seeking', got {state.phase!r}")
    nxt = dict(iteration=state.iteration + 1, waypoint_iterations=state.waypoint_iterations + 1)
    zero = np.zeros(3)
    if tip_estimate is None:
        loss = state.loss_counter + 1
        if loss > config.perception_loss_patience:
            return zero, replace(state, **nxt, loss_counter=loss, phase="aborted",
                                 abort_reason="perception lost")
        return zero, replace(state, **nxt, loss_counter=loss)
    tip = np.asarray(tip_estimate, dtype=np.float64)
    goal = trajectory.waypoints_3d[state.active_waypoint_index]
    delta = goal - tip
    dist = float(np.linalg.norm(delta))
    if dist < config.switch_threshold_mm * MM:
        return zero, replace(state, **nxt, tip_3d_estimate=tip, loss_counter=0, phase="delivering")
    if state.waypoint_iterations + 1 > config.max_iterations_per_waypoint:
        return zero, replace(state, **nxt, tip_3d_estimate=tip, loss_counter=0, phase="aborted",
                             abort_reason="waypoint iteration budget exhausted")
    step = min(config.step_mm * MM, dist)
    return delta * (step / dist), replace(state, **nxt, tip_3d_estimate=tip, loss_counter=0)


class SimulatedActuator:
    """Energy trigger that records pulses instead of toggling a line."""

    def __init__(self):
        self.pulses: list[float] = []

    def pulse(self, duration_ms: float) -> None:
        self.pulses.append(float(duration_ms))


class FaultyActuator(SimulatedActuator):
    """Fails on the given pulse numbers (0-based); for exercising the abort path."""

    def __init__(self, fail_on=(0,)):
        super().__init__()
        self.fail_on = set(fail_on)
        self.calls = 0

    def pulse(self, duration_ms: float) -> None:
        n = self.calls
        self.calls += 1
        if n in self.fail_on:
            raise ActuatorFault(f"actuator fault on pulse {n}")
        super().pulse(duration_ms)


def deliver_energy(actuator, duration_ms: float, state: ControllerState, n_waypoints: int,
                   start_ms: float = 0.0) -> tuple[dict, ControllerState]:
    """Pulse the actuator at the active waypoint and advance (or finish)."""
    if state.phase != "delivering":
        raise ValueError(f"deliver_energy needs phase 'delivering', got {state.phase!r}")
    event = {"waypoint": state.active_waypoint_index, "start_ms": float(start_ms),
             "duration_ms": float(duration_ms), "ok": True}
    try:
        actuator.pulse(duration_ms)
    except ActuatorFault as exc:
        event.update(ok=False, fault=str(exc))
        return event, replace(state, phase="aborted", abort_reason=f"actuator fault: {exc}")
    if state.active_waypoint_index + 1 >= n_waypoints:
        return event, replace(state, phase="done")
    return event, replace(state, phase="seeking", active_waypoint_index=state.active_waypoint_index + 1,
                          waypoint_iterations=0)


@dataclass(frozen=True)
class SimulationConfig:
    actuation_noise_mm: float = 0.05
    keypoint_noise_px: float | None = None  # overrides the scene's keypoint noise when set
    disparity_step_px: float = 1.0 / 16.0  # perception disparity quantization; 0 keeps it exact
    start_offset_mm: tuple[float, float, float] = (3.0, -2.0, -5.0)
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["start_offset_mm"] = list(self.start_offset_mm)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationConfig":
        d = dict(d)
        if "start_offset_mm" in d:
            d["start_offset_mm"] = tuple(d["start_offset_mm"])
        return cls(**d)


class SimulatedPlant:
    """Ground-truth tip moved by commanded displacements, re-perceived every iteration.

    The tissue behind the instrument is the scene's true disparity, or
    ``tissue_disparity`` when given (e.g. the reconstruction the trajectory was
    planned on, so waypoints and tip estimates share one measurement).
    """

    def __init__(self, scene: SyntheticScene, start_tip, sim: SimulationConfig | None = None,
                 tissue_disparity: DisparityMap | None = None):
        self.sim = sim or SimulationConfig()
        if self.sim.keypoint_noise_px is not None:
            scene = replace(scene, noise=replace(scene.noise, keypoint_noise_px=self.sim.keypoint_noise_px))
        self.scene = scene
        self.renderer = SceneRenderer(scene)
        self.tip = np.array(start_tip, dtype=np.float64)
        self.rng = np.random.default_rng(np.random.SeedSequence([scene.seed, self.sim.seed, 23]))
        step = self.sim.disparity_step_px
        base = self.renderer.tissue_disparity if tissue_disparity is None else np.asarray(tissue_disparity.values)
        if base.shape != self.renderer.tissue_disparity.shape:
            raise ValueError("tissue disparity does not match the scene image size")
        self._tissue = np.round(base / step) * step if step > 0 else base
        w, h = scene.rig.image_size
        self._us = np.arange(w, dtype=np.float64)[None, :]
        self._vs = np.arange(h, dtype=np.float64)[:, None]

    def perceive(self) -> tuple[InstrumentKeypoints, PointCloud]:
        inst = self.renderer.instrument_pose(self.tip)
        d_inst = inst.disparity
        step = self.sim.disparity_step_px
        if step > 0:
            d_inst = round(d_inst / step) * step
        disp = np.where(inst.contains(self._us, self._vs), np.fmax(self._tissue, d_inst), self._tissue)
        cloud = disparity_to_cloud(DisparityMap(disp), self.scene.rig)
        return self.renderer.keypoints(inst, self.rng), cloud

    def move(self, displacement) -> None:
        d = np.asarray(displacement, dtype=np.float64)
        if not np.any(d):
            return
        sigma = self.sim.actuation_noise_mm * MM
        if sigma > 0:
            d = d + self.rng.normal(scale=sigma, size=3)
        self.tip = self.tip + d


@dataclass
class RunLog:
    iterations: list = field(default_factory=list)
    arrivals: list = field(default_factory=list)
    energy_events: list = field(default_factory=list)
    outcome: str = "done"
    abort_reason: str | None = None
    config: dict = field(default_factory=dict)

    def arrival_errors_mm(self, estimated: bool = False) -> np.ndarray:
        key = "estimated_error_mm" if estimated else "error_mm"
        return np.array([a[key] for a in self.arrivals], dtype=np.float64)

    def summary(self) -> dict:
        return arrival_summary(self.arrival_errors_mm())

    def to_dict(self) -> dict:
        d = {
            "iterations": self.iterations,
            "arrivals": self.arrivals,
            "energy_events": self.energy_events,
            "outcome": self.outcome,
            "abort_reason": self.abort_reason,
            "config": self.config,
        }
        if self.arrivals:
            d["summary"] = self.summary()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunLog":
        from .schemas import validate_runlog

        validate_runlog(d)
        return cls(list(d["iterations"]), list(d["arrivals"]), list(d["energy_events"]), d["outcome"],
                   d.get("abort_reason"), dict(d.get("config", {})))

    def to_json(self) -> str:
        from .schemas import validate_runlog

        d = self.to_dict()
        validate_runlog(d)
        return json.dumps(d, sort_keys=True, indent=1) + "\n"

    def write_json(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def read_json(cls, path) -> "RunLog":
        return cls.from_dict(json.loads(Path(path).read_text()))


def arrival_summary(errors_mm) -> dict:
    """Mean and population std of arrival errors in mm."""
    e = np.asarray(errors_mm, dtype=np.float64)
    if e.size == 0:
        raise ValueError("no arrivals")
    return {"count": int(e.size), "mean_mm": float(e.mean()), "std_mm": float(e.std()),
            "max_mm": float(e.max())}


def _vec(x):
    return None if x is None else [float(c) for c in x]


def run_loop(plant, trajectory: BoundaryTrajectory, config: ControllerConfig, actuator=None,
             max_total_iterations: int | None = None) -> RunLog:
    """Drive ``plant`` (``perceive()`` / ``move()``, optional ground-truth ``tip``) along the trajectory."""
    actuator = actuator if actuator is not None else SimulatedActuator()
    n = len(trajectory)
    limit = max_total_iterations or n * (config.max_iterations_per_waypoint + 1)
    has_truth = hasattr(plant, "tip")
    state = ControllerState()
    log = RunLog(config=config.to_dict())
    clock = 0.0
    while state.phase in ("seeking", "delivering"):
        if state.phase == "delivering":
            event, state = deliver_energy(actuator, config.energy_duration_ms, state, n, clock)
            log.energy_events.append(event)
            clock += config.energy_duration_ms
            continue
        if state.iteration >= limit:
            state = replace(state, phase="aborted", abort_reason="iteration limit")
            break
        keypoints, cloud = plant.perceive()
        est = estimate_tip(keypoints, cloud, config)
        goal = trajectory.waypoints_3d[state.active_waypoint_index]
        idx = state.active_waypoint_index
        disp, nxt = control_step(state, est, trajectory, config)
        rec = {
            "iteration": state.iteration,
            "time_ms": clock,
            "waypoint": idx,
            "goal": _vec(goal),
            "tip_estimate": _vec(est),
            "distance_mm": None if est is None else float(np.linalg.norm(goal - est) / MM),
            "displacement_mm": _vec(disp / MM),
            "phase": nxt.phase,
            "loss_counter": nxt.loss_counter,
        }
        if has_truth:
            rec["tip_true"] = _vec(plant.tip)
            rec["true_distance_mm"] = float(np.linalg.norm(goal - plant.tip) / MM)
        log.iterations.append(rec)
        if nxt.phase == "delivering":
            arrival = {"waypoint": idx, "iteration": state.iteration, "estimated_error_mm": rec["distance_mm"]}
            arrival["error_mm"] = rec["true_distance_mm"] if has_truth else rec["distance_mm"]
            log.arrivals.append(arrival)
        plant.move(disp)
        clock += config.loop_period_ms
        state = nxt
    log.outcome = "done" if state.phase == "done" else "aborted"
    log.abort_reason = state.abort_reason
    return log


def run_episode(scene: SyntheticScene, trajectory: BoundaryTrajectory, config: ControllerConfig | None = None,
                sim: SimulationConfig | None = None, actuator=None,
                tissue_disparity: DisparityMap | None = None) -> RunLog:
    """Simulated episode: the tip starts offset from the first waypoint and must visit all of them."""
    config = config or ControllerConfig()
    sim = sim or SimulationConfig()
    start = trajectory.waypoints_3d[0] + np.asarray(sim.start_offset_mm, dtype=np.float64) * MM
    plant = SimulatedPlant(scene, start, sim, tissue_disparity)
    log = run_loop(plant, trajectory, config, actuator)
    log.config = {"controller": config.to_dict(), "simulation": sim.to_dict(), "scene_seed": scene.seed}
    return log
