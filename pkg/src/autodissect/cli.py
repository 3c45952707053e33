"""Command-line entry point: ``autodissect <subcommand> ...``.

Exit codes: 0 success, 2 configuration error (bad or missing input), 3 stage failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np

log = logging.getLogger("autodissect")

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3


class ConfigError(Exception):
    def __init__(self, stage: str, msg: str):
        super().__init__(f"[{stage}] configuration error: {msg}")
        self.stage = stage


class StageError(Exception):
    def __init__(self, stage: str, msg: str):
        super().__init__(f"[{stage}] failed: {msg}")
        self.stage = stage


def bundled(name: str) -> Path:
    return Path(str(resources.files("autodissect") / "data" / name))


def _require(path, stage: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(stage, f"missing file {p}")
    return p


def _load_json(path, stage: str) -> dict:
    p = _require(path, stage)
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(stage, f"{p} is not valid JSON: {exc}") from None


def _parse(stage: str, fn, *args):
    """Build a config object; malformed content is a config error."""
    try:
        return fn(*args)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(stage, f"{type(exc).__name__}: {exc}") from None


def _out(args, name: str, given=None) -> Path:
    p = Path(given) if given else Path(args.out_dir) / name
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ------------------------------------------------------------------ configs


@dataclass(frozen=True)
class PipelineConfig:
    chains: Path
    rig: Path
    sgm: Path
    scene: Path
    controller: Path
    out_dir: Path
    seed: int = 42
    sweep_steps: int = 25
    heldout_count: int = 50
    restarts: int = 16
    k: int = 6

    def __post_init__(self):
        for name in ("chains", "rig", "sgm", "scene", "controller"):
            _require(getattr(self, name), "pipeline")

    @classmethod
    def with_defaults(cls, out_dir, seed: int = 42, **paths) -> "PipelineConfig":
        files = {n: paths.get(n) or bundled(f"{n}.json") for n in ("chains", "rig", "sgm", "scene", "controller")}
        return cls(**{k: Path(v) for k, v in files.items()}, out_dir=Path(out_dir), seed=seed)


def load_rig(path, stage="reconstruct"):
    from .stereo import CameraRig

    return _parse(stage, CameraRig.from_dict, _load_json(path, stage))


def load_sgm(path, stage="reconstruct"):
    from .stereo import SgmParams

    return _parse(stage, SgmParams.from_dict, _load_json(path, stage))


def load_scene_file(path, stage="render"):
    from .perception import SyntheticScene

    return _parse(stage, SyntheticScene.from_dict, _load_json(path, stage))


def load_controller(path, stage="run-sim"):
    """``{"controller": {...}, "simulation": {...}}`` or a bare controller dict."""
    from .servo import ControllerConfig, SimulationConfig

    d = _load_json(path, stage)
    if "controller" in d or "simulation" in d:
        ctrl = _parse(stage, ControllerConfig.from_dict, d.get("controller", {}))
        sim = _parse(stage, SimulationConfig.from_dict, d.get("simulation", {}))
    else:
        ctrl, sim = _parse(stage, ControllerConfig.from_dict, d), SimulationConfig()
    return ctrl, sim


def load_chain_config(path, stage="calibrate"):
    from .chain import chains_from_dict
    from .schemas import validate_chains

    d = _load_json(path, stage)
    _parse(stage, validate_chains, d)
    return _parse(stage, chains_from_dict, d)


# ----------------------------------------------------------------- commands


def cmd_gen_sweep(args) -> int:
    from . import calibration as C

    stage = "gen-sweep"
    tool, cam, frames = load_chain_config(args.config, stage)
    rng = np.random.default_rng(args.seed)
    try:
        world = C.make_world(tool, cam, frames, rng, scale_error=args.scale_error,
                             base_offset_m=args.base_offset_mm * 1e-3)
        ds = C.sweep_dataset(world, rng, args.steps, args.noise_mm * 1e-3, args.frames_averaged)
        held = C.heldout_dataset(world, rng, args.heldout, args.noise_mm * 1e-3, args.frames_averaged) \
            if args.heldout > 0 else None
    except ValueError as exc:
        raise StageError(stage, str(exc)) from None
    out = _out(args, "sweep.jsonl", args.out)
    ds.write_jsonl(out)
    _dump(out.with_name("world.json"), world.to_dict())
    _dump(out.with_name("frames.json"), world.true_frames.to_dict())
    if held is not None:
        held.write_jsonl(out.with_name("heldout.jsonl"))
    log.info("wrote %d records to %s", len(ds), out)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    from . import calibration as C
    from .chain import FrameGraph
    from .report import calibration_table, format_calibration_table
    from .schemas import validate_calibration

    stage = "calibrate"
    tool, cam, nominal_frames = load_chain_config(args.config, stage)
    frames = _parse(stage, FrameGraph.from_dict, _load_json(args.frames, stage)) if args.frames else nominal_frames
    dataset = _parse(stage, C.CalibrationDataset.read_jsonl, _require(args.dataset, stage))
    heldout = _parse(stage, C.CalibrationDataset.read_jsonl, _require(args.heldout, stage)) if args.heldout else None
    opts = C.CalibrationOptions(restarts=args.restarts, seed=args.seed)
    try:
        res = C.calibrate(dataset, tool, cam, frames, opts)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise StageError(stage, str(exc)) from None
    d = res.to_dict()
    d["runtime_s"] = round(res.runtime_s, 3) if args.timing else None
    if heldout is not None:
        before = C.evaluate(tool, cam, nominal_frames, heldout)
        after = C.evaluate(res.tool_model, res.cam_model, frames, heldout)
        d["heldout"] = {
            "records": len(heldout),
            "before_mean_mm": before["per_axis_mean_error"].tolist(),
            "before_std_mm": before["per_axis_std"].tolist(),
            "after_mean_mm": after["per_axis_mean_error"].tolist(),
            "after_std_mm": after["per_axis_std"].tolist(),
        }
    d = {k: v for k, v in d.items() if v is not None}
    validate_calibration(d)
    out = _out(args, "calibration.json", args.out)
    _dump(out, d)
    print(format_calibration_table(calibration_table(d)))
    return EXIT_OK


def cmd_render(args) -> int:
    from .io import write_disparity_png, write_image
    from .perception import render_scene, to_coco

    stage = "render"
    scene = load_scene_file(args.scene, stage)
    try:
        fr = render_scene(scene, args.tip, args.seed)
    except ValueError as exc:
        raise StageError(stage, str(exc)) from None
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_image(out / "left.png", fr.left)
    write_image(out / "right.png", fr.right)
    write_disparity_png(out / "gt_disparity.png", fr.disparity)
    _dump(out / "annotations.json", to_coco(fr.segmentation, fr.keypoints, "left.png"))
    log.info("rendered %s", out)
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    from .io import read_image, write_disparity_png, write_ply
    from .stereo import bilateral_filter, disparity_to_cloud, sgm_disparity

    stage = "reconstruct"
    rig = load_rig(args.rig, stage)
    params = load_sgm(args.params, stage)
    try:
        left = read_image(_require(args.left, stage))
        right = read_image(_require(args.right, stage))
    except OSError as exc:
        raise ConfigError(stage, str(exc)) from None
    try:
        t = time.perf_counter()
        disp = sgm_disparity(bilateral_filter(left), bilateral_filter(right), params)
        cloud = disparity_to_cloud(disp, rig)
    except ValueError as exc:
        raise StageError(stage, str(exc)) from None
    log.info("sgm %.2fs, %.1f%% valid", time.perf_counter() - t, 100 * disp.valid.mean())
    write_ply(_out(args, "cloud.ply", args.out_cloud), cloud)
    write_disparity_png(_out(args, "disparity.png", args.out_disparity), disp)
    return EXIT_OK


def cmd_plan(args) -> int:
    from .io import read_disparity_png, write_image
    from .perception import AnnotationError, load_annotations
    from .planner import PlannerConfig, PlanningError, build_trajectory, overlay_image
    from .stereo import disparity_to_cloud

    stage = "plan"
    rig = load_rig(args.rig, stage)
    try:
        ann = load_annotations(_require(args.annotations, stage))
    except AnnotationError as exc:
        raise ConfigError(stage, str(exc)) from None
    disp = _parse(stage, read_disparity_png, _require(args.disparity, stage))
    if disp.shape != ann.frame.primary_mask.shape:
        raise ConfigError(stage, "disparity and annotation sizes differ")
    try:
        traj = build_trajectory(ann.frame, disp, disparity_to_cloud(disp, rig), args.k, PlannerConfig(k=args.k))
    except (PlanningError, ValueError) as exc:
        raise StageError(stage, str(exc)) from None
    out = _out(args, "traj.json", args.out)
    traj.write_json(out)
    traj.write_csv(out.with_suffix(".csv"))
    write_image(out.with_name(out.stem + "_overlay.png"), overlay_image(ann.frame, traj))
    log.info("%d waypoints, spacing %s", len(traj), traj.spacing())
    return EXIT_OK


def cmd_run_sim(args) -> int:
    from .planner import BoundaryTrajectory
    from .servo import run_episode

    stage = "run-sim"
    scene = load_scene_file(args.scene, stage)
    traj = _parse(stage, BoundaryTrajectory.read_json, _require(args.trajectory, stage))
    ctrl, sim = load_controller(args.config, stage)
    sim = replace(sim, seed=args.seed)
    tissue = None
    if args.disparity:
        from .io import read_disparity_png

        tissue = _parse(stage, read_disparity_png, _require(args.disparity, stage))
    try:
        runlog = run_episode(scene, traj, ctrl, sim, tissue_disparity=tissue)
    except ValueError as exc:
        raise ConfigError(stage, str(exc)) from None
    out = _out(args, "runlog.json", args.out)
    runlog.write_json(out)
    if runlog.outcome != "done":
        raise StageError(stage, f"episode aborted: {runlog.abort_reason} (log written to {out})")
    log.info("episode done: %s", runlog.summary())
    return EXIT_OK


def cmd_report(args) -> int:
    from .report import arrival_report, calibration_table, format_arrival_report, format_calibration_table
    from .schemas import validate_calibration
    from .servo import RunLog

    stage = "report"
    if not args.runlog and not args.calibration:
        raise ConfigError(stage, "give --runlog and/or --calibration")
    summary = {}
    if args.calibration:
        cal = _load_json(args.calibration, stage)
        _parse(stage, validate_calibration, cal)
        summary["calibration"] = calibration_table(cal)
        print(format_calibration_table(summary["calibration"]))
    status = EXIT_OK
    if args.runlog:
        runlog = _parse(stage, RunLog.from_dict, _load_json(args.runlog, stage))
        if not runlog.arrivals:
            print("no arrivals")
            summary["arrivals"] = {"count": 0, "outcome": runlog.outcome}
            status = EXIT_STAGE
        else:
            summary["arrivals"] = arrival_report(runlog)
            print(format_arrival_report(summary["arrivals"]))
    if args.out:
        _dump(_out(args, "summary.json", args.out), summary)
    return status


def cmd_pipeline(args) -> int:
    """Every stage in order on the bundled (or given) configs."""
    cfg = PipelineConfig.with_defaults(args.out_dir, args.seed, chains=args.chains, rig=args.rig, sgm=args.sgm,
                                       scene=args.scene, controller=args.controller)
    out = cfg.out_dir
    seeds = np.random.SeedSequence(cfg.seed).generate_state(4)
    common = dict(out_dir=str(out), verbose=args.verbose)
    steps = [
        (cmd_gen_sweep, dict(config=cfg.chains, steps=cfg.sweep_steps, noise_mm=0.5, frames_averaged=10,
                             heldout=cfg.heldout_count, scale_error=0.05, base_offset_mm=50.0,
                             out=out / "sweep.jsonl", seed=int(seeds[0]))),
        (cmd_calibrate, dict(config=cfg.chains, dataset=out / "sweep.jsonl", frames=out / "frames.json",
                             heldout=out / "heldout.jsonl", restarts=cfg.restarts, out=out / "calibration.json",
                             timing=False, seed=int(seeds[1]))),
        (cmd_render, dict(scene=cfg.scene, tip=None, seed=int(seeds[2]))),
        (cmd_reconstruct, dict(left=out / "left.png", right=out / "right.png", rig=cfg.rig, params=cfg.sgm,
                               out_cloud=out / "cloud.ply", out_disparity=out / "disparity.png")),
        (cmd_plan, dict(annotations=out / "annotations.json", disparity=out / "disparity.png", rig=cfg.rig,
                        k=cfg.k, out=out / "traj.json")),
        (cmd_run_sim, dict(scene=cfg.scene, trajectory=out / "traj.json", config=cfg.controller,
                           disparity=out / "disparity.png", out=out / "runlog.json", seed=int(seeds[3]))),
        (cmd_report, dict(runlog=out / "runlog.json", calibration=out / "calibration.json",
                          out=out / "summary.json")),
    ]
    for fn, kw in steps:
        log.info("stage %s", fn.__name__[4:].replace("_", "-"))
        status = fn(argparse.Namespace(**common, **kw))
        if status != EXIT_OK:
            return status
    return EXIT_OK


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=42)
    common.add_argument("--out-dir", default=".")
    common.add_argument("--verbose", "-v", action="store_true")

    p = argparse.ArgumentParser(prog="autodissect", description=__doc__.splitlines()[0], parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-sweep", parents=[common], help="synthetic joint-sweep calibration dataset")
    s.add_argument("--config", default=str(bundled("chains.json")))
    s.add_argument("--steps", type=int, default=25)
    s.add_argument("--noise-mm", type=float, default=0.5)
    s.add_argument("--frames-averaged", type=int, default=10)
    s.add_argument("--heldout", type=int, default=50, help="random held-out configurations per arm (0: none)")
    s.add_argument("--scale-error", type=float, default=0.05)
    s.add_argument("--base-offset-mm", type=float, default=50.0)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_gen_sweep)

    s = sub.add_parser("calibrate", parents=[common], help="fit twists and joint remaps")
    s.add_argument("--dataset", required=True)
    s.add_argument("--config", default=str(bundled("chains.json")))
    s.add_argument("--frames", help="measured base frames (g_hr, g_hs); defaults to the config's")
    s.add_argument("--heldout", help="held-out dataset for before/after evaluation")
    s.add_argument("--restarts", type=int, default=16)
    s.add_argument("--timing", action="store_true", help="record runtime (makes output non-reproducible)")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_calibrate)

    s = sub.add_parser("render", parents=[common], help="render a synthetic stereo frame with annotations")
    s.add_argument("--scene", default=str(bundled("scene.json")))
    s.add_argument("--tip", type=float, nargs=3, metavar=("X", "Y", "Z"))
    s.set_defaults(fn=cmd_render)

    s = sub.add_parser("reconstruct", parents=[common], help="SGM disparity and point cloud")
    s.add_argument("--left", required=True)
    s.add_argument("--right", required=True)
    s.add_argument("--rig", default=str(bundled("rig.json")))
    s.add_argument("--params", default=str(bundled("sgm.json")))
    s.add_argument("--out-cloud")
    s.add_argument("--out-disparity")
    s.set_defaults(fn=cmd_reconstruct)

    s = sub.add_parser("plan", parents=[common], help="boundary trajectory from masks and disparity")
    s.add_argument("--annotations", required=True)
    s.add_argument("--disparity", required=True)
    s.add_argument("--rig", default=str(bundled("rig.json")))
    s.add_argument("--k", type=int, default=6)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_plan)

    s = sub.add_parser("run-sim", parents=[common], help="closed-loop servoing episode in simulation")
    s.add_argument("--scene", default=str(bundled("scene.json")))
    s.add_argument("--trajectory", required=True)
    s.add_argument("--config", default=str(bundled("controller.json")))
    s.add_argument("--disparity", help="tissue disparity PNG seen behind the instrument (default: ground truth)")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_run_sim)

    s = sub.add_parser("report", parents=[common], help="calibration table and arrival statistics")
    s.add_argument("--runlog")
    s.add_argument("--calibration")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_report)

    s = sub.add_parser("pipeline", parents=[common], help="run every stage on bundled or given configs")
    for name in ("chains", "rig", "sgm", "scene", "controller"):
        s.add_argument(f"--{name}")
    s.set_defaults(fn=cmd_pipeline)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
