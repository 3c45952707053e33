"""Product-of-exponentials forward kinematics for the tool and camera arms."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .se3 import Pose, Twist, compose, exp_batch, invert

ARM_JOINTS = {"tool": 6, "camera": 4}


@dataclass(frozen=True, eq=False)
class ChainModel:
    """Joint twists plus the linear console-to-calibrated angle map.

    ``tip_offset`` is the fixed marker pose in the base frame at the zero
    configuration; it is not a calibration variable. ``joint_limits`` is
    only consumed by the synthetic sweep generator.
    """

    kind: str
    twists: tuple[Twist, ...]
    remap_scale: np.ndarray
    remap_offset: np.ndarray
    tip_offset: Pose = field(default_factory=Pose.identity)
    joint_limits: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ARM_JOINTS:
            raise ValueError(f"unknown arm kind {self.kind!r}")
        n = ARM_JOINTS[self.kind]
        twists = tuple(self.twists)
        if len(twists) != n:
            raise ValueError(f"{self.kind} arm needs {n} twists, got {len(twists)}")
        scale = np.array(self.remap_scale, dtype=np.float64).reshape(-1)
        offset = np.array(self.remap_offset, dtype=np.float64).reshape(-1)
        if scale.shape != (n,) or offset.shape != (n,):
            raise ValueError("remap parameters must have one entry per joint")
        if np.any(scale == 0):
            raise ValueError("remap_scale entries must be nonzero")
        scale.flags.writeable = False
        offset.flags.writeable = False
        object.__setattr__(self, "twists", twists)
        object.__setattr__(self, "remap_scale", scale)
        object.__setattr__(self, "remap_offset", offset)
        if self.joint_limits is not None:
            lim = np.array(self.joint_limits, dtype=np.float64).reshape(n, 2)
            lim.flags.writeable = False
            object.__setattr__(self, "joint_limits", lim)

    @property
    def n_joints(self) -> int:
        return len(self.twists)

    @property
    def joint_classes(self) -> tuple[str, ...]:
        return tuple(t.joint for t in self.twists)

    def with_params(self, twists=None, remap_scale=None, remap_offset=None) -> "ChainModel":
        return replace(
            self,
            twists=self.twists if twists is None else tuple(twists),
            remap_scale=self.remap_scale if remap_scale is None else remap_scale,
            remap_offset=self.remap_offset if remap_offset is None else remap_offset,
        )

    def twist_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Stacked (n, 3) linear and angular parts."""
        return (np.array([t.linear for t in self.twists]), np.array([t.angular for t in self.twists]))

    def to_dict(self) -> dict:
        joints = []
        for i, t in enumerate(self.twists):
            j = t.to_dict()
            j["scale"] = float(self.remap_scale[i])
            j["offset"] = float(self.remap_offset[i])
            if self.joint_limits is not None:
                j["limits"] = self.joint_limits[i].tolist()
            joints.append(j)
        return {"kind": self.kind, "joints": joints, "tip_offset": self.tip_offset.to_list()}

    @classmethod
    def from_dict(cls, d: dict) -> "ChainModel":
        joints = d["joints"]
        limits = [j["limits"] for j in joints] if all("limits" in j for j in joints) else None
        return cls(
            kind=d["kind"],
            twists=tuple(Twist.from_dict(j) for j in joints),
            remap_scale=[j.get("scale", 1.0) for j in joints],
            remap_offset=[j.get("offset", 0.0) for j in joints],
            tip_offset=Pose.from_list(d["tip_offset"]) if "tip_offset" in d else Pose.identity(),
            joint_limits=limits,
        )


@dataclass(frozen=True)
class FrameGraph:
    """Helper-frame placement of both arm bases (g_hr: tool, g_hs: camera)."""

    g_hr: Pose
    g_hs: Pose

    def __post_init__(self):
        for p in (self.g_hr, self.g_hs):
            if not p.is_valid(1e-6):
                raise ValueError("frame transforms must be rigid")

    def base(self, arm: str) -> Pose:
        return self.g_hr if arm == "tool" else self.g_hs

    def regauged(self, q: Pose) -> "FrameGraph":
        return FrameGraph(compose(q, self.g_hr), compose(q, self.g_hs))

    def to_dict(self) -> dict:
        return {"g_hr": self.g_hr.to_list(), "g_hs": self.g_hs.to_list()}

    @classmethod
    def from_dict(cls, d: dict) -> "FrameGraph":
        return cls(Pose.from_list(d["g_hr"]), Pose.from_list(d["g_hs"]))


def _check_angles(model: ChainModel, console_angles) -> np.ndarray:
    q = np.asarray(console_angles, dtype=np.float64)
    if q.shape[-1:] != (model.n_joints,):
        raise ValueError(f"expected {model.n_joints} joint values, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ValueError("joint values must be finite")
    return q


def remap_joints(model: ChainModel, console_angles) -> np.ndarray:
    """Calibrated joint values ``scale * console + offset`` (elementwise)."""
    q = _check_angles(model, console_angles)
    return model.remap_scale * q + model.remap_offset


def unmap_joints(model: ChainModel, joint_values) -> np.ndarray:
    q = _check_angles(model, joint_values)
    return (q - model.remap_offset) / model.remap_scale


def forward_kinematics(model: ChainModel, console_angles) -> Pose:
    """Left-to-right product of joint exponentials, then the fixed tip offset."""
    theta = remap_joints(model, console_angles)
    v, w = model.twist_arrays()
    R, t = exp_batch(v, w, theta)
    g = np.eye(4)
    for i in range(model.n_joints):
        f = np.eye(4)
        f[:3, :3] = R[i]
        f[:3, 3] = t[i]
        g = g @ f
    return compose(Pose.from_matrix(g), model.tip_offset)


def forward_positions(model: ChainModel, console_angles) -> np.ndarray:
    """Tip positions (N, 3) in the base frame for a batch of configurations."""
    q = np.atleast_2d(_check_angles(model, console_angles))
    theta = model.remap_scale * q + model.remap_offset
    v, w = model.twist_arrays()
    R, t = exp_batch(v[None], w[None], theta)
    p = np.broadcast_to(model.tip_offset.translation, (q.shape[0], 3))
    for i in range(model.n_joints - 1, -1, -1):
        p = np.einsum("nij,nj->ni", R[:, i], p) + t[:, i]
    return p


def tip_in_camera(frames: FrameGraph, tool: ChainModel, cam: ChainModel, tool_angles, cam_angles) -> Pose:
    """Tool tip expressed in the camera tip frame: g_es g_sh g_hr g_rt."""
    g_rt = forward_kinematics(tool, tool_angles)
    g_se = forward_kinematics(cam, cam_angles)
    return compose(compose(compose(invert(g_se), invert(frames.g_hs)), frames.g_hr), g_rt)


def load_chains(path) -> tuple[ChainModel, ChainModel, FrameGraph]:
    """Read a chain configuration file: ``{"tool": ..., "camera": ..., "frames": ...}``."""
    d = json.loads(Path(path).read_text())
    return chains_from_dict(d)


def chains_from_dict(d: dict) -> tuple[ChainModel, ChainModel, FrameGraph]:
    tool = ChainModel.from_dict({"kind": "tool", **d["tool"]})
    cam = ChainModel.from_dict({"kind": "camera", **d["camera"]})
    frames = FrameGraph.from_dict(d["frames"]) if "frames" in d else FrameGraph(Pose.identity(), Pose.identity())
    return tool, cam, frames


def chains_to_dict(tool: ChainModel, cam: ChainModel, frames: FrameGraph | None = None) -> dict:
    out = {"tool": tool.to_dict(), "camera": cam.to_dict()}
    if frames is not None:
        out["frames"] = frames.to_dict()
    return out
