"""Arrival error of the simulated servo loop versus perception and actuation noise.

Plans a 6-waypoint trajectory on ground-truth disparity for each random scene,
then runs seeded episodes for every noise setting and pools the arrivals.

    python3 scripts/servo_experiment.py --episodes 10 --out servo.json
"""
from __future__ import annotations

import argparse
import json
from dataclasses import asdict, dataclass

import numpy as np

from autodissect.perception import random_scene, render_scene
from autodissect.planner import build_trajectory
from autodissect.servo import ControllerConfig, SimulationConfig, arrival_summary, run_episode
from autodissect.stereo import CameraRig, disparity_to_cloud


@dataclass(frozen=True)
class ServoExperiment:
    scenes: int = 4
    episodes: int = 10
    keypoint_noise_px: tuple = (0.0, 1.0, 2.0, 4.0)
    actuation_noise_mm: tuple = (0.0, 0.05, 0.1)
    waypoints: int = 6


def run(cfg: ServoExperiment, controller: ControllerConfig) -> list[dict]:
    rig = CameraRig(1000.0, (320.0, 240.0), 0.005, (640, 480))
    plans = []
    for seed in range(cfg.scenes):
        scene = random_scene(seed, rig)
        fr = render_scene(scene)
        traj = build_trajectory(fr.segmentation, fr.disparity, disparity_to_cloud(fr.disparity, rig), cfg.waypoints)
        plans.append((scene, traj))
    rows = []
    for kp in cfg.keypoint_noise_px:
        for act in cfg.actuation_noise_mm:
            errors, done, iters = [], 0, []
            for ep in range(cfg.episodes):
                scene, traj = plans[ep % len(plans)]
                sim = SimulationConfig(actuation_noise_mm=act, keypoint_noise_px=kp or None, seed=ep)
                log = run_episode(scene, traj, controller, sim)
                done += log.outcome == "done"
                errors += log.arrival_errors_mm().tolist()
                iters.append(len(log.iterations))
            s = arrival_summary(errors) if errors else {"mean_mm": float("nan"), "std_mm": float("nan")}
            rows.append({"keypoint_noise_px": kp, "actuation_noise_mm": act, "done": done,
                         "episodes": cfg.episodes, "mean_mm": s["mean_mm"], "std_mm": s["std_mm"],
                         "max_mm": max(errors, default=float("nan")), "mean_iterations": float(np.mean(iters))})
            print(f"keypoint {kp:.1f} px, actuation {act:.2f} mm: {done}/{cfg.episodes} done, "
                  f"{s['mean_mm']:.3f} ± {s['std_mm']:.3f} mm", flush=True)
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--episodes", type=int, default=ServoExperiment.episodes)
    ap.add_argument("--step-mm", type=float, default=ControllerConfig.step_mm)
    ap.add_argument("--out")
    args = ap.parse_args()
    cfg = ServoExperiment(episodes=args.episodes)
    controller = ControllerConfig(step_mm=args.step_mm)
    rows = run(cfg, controller)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"config": asdict(cfg), "controller": controller.to_dict(), "runs": rows}, fh, indent=1)


if __name__ == "__main__":
    main()
