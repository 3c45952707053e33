"""Kinematic calibration of both arms from fiducial marker sweeps.

The unknowns are every joint twist plus the per-joint remap scale and offset
of both arms: 6*6 + 6 + 6 for the tool arm and 6*4 + 4 + 4 for the camera
arm, 80 in total. Base placements (``FrameGraph``) are measured inputs.

Residuals are predicted minus measured marker positions in the helper
frame; an optional weighted orientation term uses the rotation-vector error.
The solver is a damped least-squares (Levenberg-Marquardt) loop with an
analytic Jacobian, restarted from perturbed initial models.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .chain import ARM_JOINTS, ChainModel, FrameGraph
from .se3 import (
    PRISMATIC,
    REVOLUTE,
    Pose,
    Twist,
    compose,
    exp_batch,
    hat,
    left_jacobian,
    so3_left_jacobian_inv,
    so3_log,
)

ARMS = ("tool", "camera")


class CoverageError(ValueError):
    """Raised when the dataset does not sweep every joint."""


@dataclass(frozen=True, eq=False)
class Record:
    arm: str
    console_angles: np.ndarray
    marker_pose: Pose
    frames_averaged: int = 1

    def __post_init__(self):
        if self.arm not in ARM_JOINTS:
            raise ValueError(f"unknown arm {self.arm!r}")
        q = np.array(self.console_angles, dtype=np.float64).reshape(-1)
        if q.shape != (ARM_JOINTS[self.arm],):
            raise ValueError(f"{self.arm} record needs {ARM_JOINTS[self.arm]} angles, got {q.size}")
        if int(self.frames_averaged) < 1:
            raise ValueError("frames_averaged must be at least 1")
        q.flags.writeable = False
        object.__setattr__(self, "console_angles", q)
        object.__setattr__(self, "frames_averaged", int(self.frames_averaged))

    def to_dict(self) -> dict:
        return {
            "arm": self.arm,
            "console_angles": self.console_angles.tolist(),
            "marker_pose": self.marker_pose.to_list(),
            "frames_averaged": self.frames_averaged,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Record":
        return cls(d["arm"], d["console_angles"], Pose.from_list(d["marker_pose"]), d.get("frames_averaged", 1))


@dataclass(frozen=True)
class CalibrationDataset:
    records: tuple[Record, ...]

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))

    def __len__(self):
        return len(self.records)

    def arm(self, arm: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Console angles (N, n), marker positions (N, 3), marker rotations (N, 3, 3)."""
        recs = [r for r in self.records if r.arm == arm]
        n = ARM_JOINTS[arm]
        if not recs:
            return np.zeros((0, n)), np.zeros((0, 3)), np.zeros((0, 3, 3))
        q = np.array([r.console_angles for r in recs])
        p = np.array([r.marker_pose.translation for r in recs])
        R = np.array([r.marker_pose.rotation for r in recs])
        return q, p, R

    def write_jsonl(self, path) -> None:
        from .schemas import validate_record

        lines = []
        for r in self.records:
            d = r.to_dict()
            validate_record(d)
            lines.append(json.dumps(d))
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))

    @classmethod
    def read_jsonl(cls, path) -> "CalibrationDataset":
        from .schemas import validate_record

        recs = []
        for line in Path(path).read_text().splitlines():
            if line.strip():
                d = json.loads(line)
                validate_record(d)
                recs.append(Record.from_dict(d))
        return cls(tuple(recs))


def check_coverage(dataset: CalibrationDataset, models: dict[str, ChainModel], min_fraction: float = 0.5) -> None:
    """Every joint of every arm must be swept.

    With configured joint limits the console spread must cover
    ``min_fraction`` of the range; without limits at least three distinct
    values are required.
    """
    for arm in ARMS:
        q, _, _ = dataset.arm(arm)
        model = models[arm]
        if len(q) == 0:
            raise CoverageError(f"no {arm} records in dataset")
        for j in range(model.n_joints):
            col = q[:, j]
            spread = col.max() - col.min()
            if model.joint_limits is not None:
                lo, hi = model.joint_limits[j]
                if spread < min_fraction * (hi - lo):
                    raise CoverageError(f"{arm} joint {j + 1} spans {spread:.4g}, below {min_fraction:.0%} of its range")
            elif len(np.unique(col)) < 3:
                raise CoverageError(f"{arm} joint {j + 1} is never swept")


# ---------------------------------------------------------------- parameters


def n_variables(models) -> int:
    return sum(8 * m.n_joints for m in models)


def pack(models) -> np.ndarray:
    parts = []
    for m in models:
        v, w = m.twist_arrays()
        parts += [np.concatenate([v, w], axis=1).ravel(), m.remap_scale, m.remap_offset]
    return np.concatenate(parts)


def unpack(x: np.ndarray, templates) -> list[ChainModel]:
    out = []
    k = 0
    for m in templates:
        n = m.n_joints
        tw = x[k : k + 6 * n].reshape(n, 6)
        k += 6 * n
        scale = x[k : k + n]
        offset = x[k + n : k + 2 * n]
        k += 2 * n
        twists = [Twist(tw[i, 3:], tw[i, :3], m.twists[i].joint) for i in range(n)]
        out.append(m.with_params(twists, scale.copy(), offset.copy()))
    return out


def frozen_mask(templates) -> np.ndarray:
    """Variables held fixed: the angular part of prismatic twists stays zero."""
    mask = []
    for m in templates:
        n = m.n_joints
        tw = np.zeros((n, 6), dtype=bool)
        for i, t in enumerate(m.twists):
            if t.joint == PRISMATIC:
                tw[i, 3:] = True
        mask += [tw.ravel(), np.zeros(2 * n, dtype=bool)]
    return np.concatenate(mask)


def normalize_params(x: np.ndarray, templates) -> np.ndarray:
    """Remove the twist-scale gauge: scale each twist to its class norm.

    ``exp(hat(k xi) theta / k)`` is unchanged, so dividing the twist by ``k``
    and multiplying its remap scale and offset by ``k`` preserves every
    prediction exactly (up to rounding).
    """
    x = x.copy()
    k0 = 0
    for m in templates:
        n = m.n_joints
        for i, t in enumerate(m.twists):
            sl = slice(k0 + 6 * i, k0 + 6 * i + 6)
            xi = x[sl]
            k = np.linalg.norm(xi[3:]) if t.joint == REVOLUTE else np.linalg.norm(xi[:3])
            if k > 0:
                x[sl] = xi / k
                x[k0 + 6 * n + i] *= k
                x[k0 + 7 * n + i] *= k
        k0 += 8 * n
    return x


# ------------------------------------------------------- residuals + Jacobian


@dataclass
class _ArmData:
    q: np.ndarray
    p: np.ndarray
    R: np.ndarray
    base: Pose
    tip: Pose


def _arm_terms(xa: np.ndarray, n: int, data: _ArmData, orient_w: float, want_jac: bool):
    """Residual rows and their Jacobian for one arm's 8n parameters."""
    tw = xa[: 6 * n].reshape(n, 6)
    alpha = xa[6 * n : 7 * n]
    beta = xa[7 * n : 8 * n]
    N = len(data.q)
    theta = data.q * alpha + beta  # (N, n)
    v = np.broadcast_to(tw[:, :3], (N, n, 3))
    w = np.broadcast_to(tw[:, 3:], (N, n, 3))
    Ri, ti = exp_batch(v, w, theta)  # (N, n, 3, 3), (N, n, 3)

    # prefix rotations A_i = R_base R_0 ... R_{i-1}
    A = np.empty((N, n + 1, 3, 3))
    A[:, 0] = data.base.rotation
    for i in range(n):
        A[:, i + 1] = A[:, i] @ Ri[:, i]
    # suffix points q_i = E_i ... E_n M o
    Q = np.empty((N, n + 1, 3))
    Q[:, n] = data.tip.translation
    for i in range(n - 1, -1, -1):
        Q[:, i] = np.einsum("nij,nj->ni", Ri[:, i], Q[:, i + 1]) + ti[:, i]
    pred = np.einsum("ij,nj->ni", data.base.rotation, Q[:, 0]) + data.base.translation
    res_p = pred - data.p
    rows = [res_p]
    use_rot = orient_w > 0
    if use_rot:
        R_pred = A[:, n] @ data.tip.rotation
        e = so3_log(R_pred @ np.swapaxes(data.R, 1, 2))
        rows.append(orient_w * e)
    r = np.concatenate(rows, axis=1).ravel() if N else np.zeros(0)
    if not want_jac:
        return r, None

    m = 6 if use_rot else 3
    J = np.zeros((N, m, 8 * n))
    if use_rot:
        Jinv = so3_left_jacobian_inv(e)
    for i in range(n):
        Ai = A[:, i]
        qi = Q[:, i]
        # d(point)/d(theta_i) = A_i (w x q + v)
        dth = np.einsum("nij,nj->ni", Ai, np.cross(tw[i, 3:], qi) + tw[i, :3])
        # left perturbation of the factor: eta = theta_i J_l(theta_i xi_i) d(xi)
        Jl = left_jacobian(theta[:, i, None] * tw[i]) * theta[:, i, None, None]  # (N, 6, 6)
        G = np.concatenate([np.broadcast_to(np.eye(3), (N, 3, 3)), -hat(qi)], axis=2)  # (N, 3, 6)
        J[:, :3, 6 * i : 6 * i + 6] = Ai @ G @ Jl
        J[:, :3, 6 * n + i] = dth * data.q[:, i, None]
        J[:, :3, 7 * n + i] = dth
        if use_rot:
            dth_r = np.einsum("nij,nj->ni", Ai, np.broadcast_to(tw[i, 3:], (N, 3)))
            dth_r = orient_w * np.einsum("nij,nj->ni", Jinv, dth_r)
            J[:, 3:, 6 * i : 6 * i + 6] = orient_w * Jinv @ Ai @ Jl[:, 3:, :]
            J[:, 3:, 6 * n + i] = dth_r * data.q[:, i, None]
            J[:, 3:, 7 * n + i] = dth_r
    return r, J.reshape(N * m, 8 * n)


class _Problem:
    def __init__(self, dataset, templates, frames: FrameGraph, orientation_weight: float = 0.0):
        self.templates = list(templates)
        self.orient_w = float(orientation_weight)
        self.data = []
        for m in self.templates:
            q, p, R = dataset.arm(m.kind)
            self.data.append(_ArmData(q, p, R, frames.base(m.kind), m.tip_offset))

    def __call__(self, x: np.ndarray, want_jac: bool = True):
        rs, blocks = [], []
        k = 0
        for m, d in zip(self.templates, self.data):
            n = m.n_joints
            r, J = _arm_terms(x[k : k + 8 * n], n, d, self.orient_w, want_jac)
            rs.append(r)
            blocks.append((k, J))
            k += 8 * n
        r = np.concatenate(rs)
        if not want_jac:
            return r, None
        J = np.zeros((len(r), len(x)))
        row = 0
        for (k0, Jb), rb in zip(blocks, rs):
            J[row : row + len(rb), k0 : k0 + Jb.shape[1]] = Jb
            row += len(rb)
        return r, J


def residuals(tool: ChainModel, cam: ChainModel, frames: FrameGraph, dataset: CalibrationDataset) -> np.ndarray:
    """Predicted minus measured marker position per record (N, 3), meters, dataset order."""
    for r in dataset.records:
        model = tool if r.arm == "tool" else cam
        if model.kind != r.arm:
            raise ValueError(f"model for {r.arm} records has kind {model.kind}")
    out = np.zeros((len(dataset), 3))
    x = pack([tool, cam])
    prob = _Problem(dataset, [tool, cam], frames)
    r, _ = prob(x, want_jac=False)
    r = r.reshape(-1, 3)
    idx = {a: [i for i, rec in enumerate(dataset.records) if rec.arm == a] for a in ARMS}
    out[idx["tool"] + idx["camera"]] = r
    return out


def cost(x: np.ndarray, problem) -> float:
    r, _ = problem(x, want_jac=False)
    return 0.5 * float(r @ r)


def gradient(x: np.ndarray, problem) -> np.ndarray:
    r, J = problem(x)
    return J.T @ r


# ------------------------------------------------------------------ solver


@dataclass
class LMTrace:
    x: np.ndarray
    cost: float
    initial_cost: float
    iterations: int
    converged: bool
    accepted_costs: list = field(default_factory=list)


def levenberg_marquardt(problem, x0: np.ndarray, templates, max_iters: int = 200, tol: float = 1e-10) -> LMTrace:
    """Monotone damped least squares: a step is taken only if it lowers the cost."""
    frozen = frozen_mask(templates)
    free = ~frozen
    x = normalize_params(x0, templates)
    x[frozen] = 0.0
    r, J = problem(x)
    c = 0.5 * float(r @ r)
    c0 = c
    lam = 1e-3
    costs = [c]
    converged = False
    it = 0
    while it < max_iters:
        it += 1
        Jf = J[:, free]
        g = Jf.T @ r
        if np.max(np.abs(g)) <= tol * max(1.0, c) * 1e-3:
            converged = True
            break
        H = Jf.T @ Jf
        d = np.diag(H).copy()
        d = np.maximum(d, 1e-12 * max(d.max(), 1e-30))
        accepted = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(H + lam * np.diag(d), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            x_new = x.copy()
            x_new[free] += step
            x_new = normalize_params(x_new, templates)
            r_new, _ = problem(x_new, want_jac=False)
            c_new = 0.5 * float(r_new @ r_new)
            if np.isfinite(c_new) and c_new < c:
                accepted = True
                break
            lam *= 4.0
        if not accepted:
            converged = True  # no descent direction left at machine precision
            break
        rel = (c - c_new) / max(c, 1e-300)
        small_step = np.linalg.norm(step) <= tol * (np.linalg.norm(x[free]) + tol)
        x, c = x_new, c_new
        costs.append(c)
        r, J = problem(x)
        lam = max(lam / 3.0, 1e-12)
        if rel < tol or small_step or c < 1e-30:
            converged = True
            break
    return LMTrace(x, c, c0, it, converged, costs)


@dataclass(frozen=True)
class CalibrationOptions:
    restarts: int = 16
    max_iters: int = 200
    tol: float = 1e-10
    orientation_weight: float = 0.0
    seed: int = 0
    # perturbation of restart initials
    axis_tilt_rad: float = 0.02
    axis_shift_m: float = 0.003
    scale_jitter: float = 0.03
    offset_jitter: float = 0.02


@dataclass
class CalibrationResult:
    tool_model: ChainModel
    cam_model: ChainModel
    per_axis_mean_error: np.ndarray  # mm, on the calibration data
    per_axis_std: np.ndarray
    initial_mean_error: np.ndarray
    initial_std: np.ndarray
    iterations: int
    converged: bool
    initial_cost: float
    final_cost: float
    restarts: int
    n_variables: int
    runtime_s: float = 0.0

    def to_dict(self) -> dict:
        from .chain import chains_to_dict

        return {
            "models": chains_to_dict(self.tool_model, self.cam_model),
            "per_axis_mean_error_mm": self.per_axis_mean_error.tolist(),
            "per_axis_std_mm": self.per_axis_std.tolist(),
            "initial_mean_error_mm": self.initial_mean_error.tolist(),
            "initial_std_mm": self.initial_std.tolist(),
            "iterations": self.iterations,
            "converged": self.converged,
            "initial_cost": self.initial_cost,
            "final_cost": self.final_cost,
            "restarts": self.restarts,
            "n_variables": self.n_variables,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationResult":
        from .chain import chains_from_dict

        tool, cam, _ = chains_from_dict(d["models"])
        return cls(
            tool, cam,
            np.array(d["per_axis_mean_error_mm"]), np.array(d["per_axis_std_mm"]),
            np.array(d["initial_mean_error_mm"]), np.array(d["initial_std_mm"]),
            int(d["iterations"]), bool(d["converged"]),
            float(d["initial_cost"]), float(d["final_cost"]),
            int(d["restarts"]), int(d["n_variables"]),
        )


def perturb_model(model: ChainModel, rng: np.random.Generator, axis_tilt: float, axis_shift: float,
                  scale_jitter: float, offset_jitter: float) -> ChainModel:
    """Random nearby model: tilted/shifted joint axes and jittered remap parameters."""
    twists = []
    for t in model.twists:
        tilt = Pose.from_rotvec(rng.normal(scale=axis_tilt, size=3)).rotation
        shift = rng.normal(scale=axis_shift, size=3)
        if t.joint == PRISMATIC:
            twists.append(Twist.prismatic(tilt @ t.linear))
        else:
            w = tilt @ t.angular
            w = w / np.linalg.norm(w)
            # keep the pitch, move the axis through a shifted point
            pitch = float(t.angular @ t.linear)
            q = np.cross(t.angular, t.linear) + shift
            twists.append(Twist.revolute(w, q, pitch))
    scale = model.remap_scale * (1.0 + rng.normal(scale=scale_jitter, size=model.n_joints))
    offset = model.remap_offset + rng.normal(scale=offset_jitter, size=model.n_joints)
    return model.with_params(twists, scale, offset)


def evaluate(tool: ChainModel, cam: ChainModel, frames: FrameGraph, dataset: CalibrationDataset) -> dict:
    """Per-axis mean and (population) std of |predicted - measured|, in mm."""
    err = np.abs(residuals(tool, cam, frames, dataset)) * 1000.0
    if len(err) == 0:
        return {"per_axis_mean_error": np.zeros(3), "per_axis_std": np.zeros(3)}
    return {"per_axis_mean_error": err.mean(axis=0), "per_axis_std": err.std(axis=0)}


def calibrate(dataset: CalibrationDataset, tool: ChainModel, cam: ChainModel, frames: FrameGraph,
              options: CalibrationOptions | None = None) -> CalibrationResult:
    """Fit all twists and remap parameters of both arms to the sweep dataset."""
    opts = options or CalibrationOptions()
    start = time.perf_counter()
    check_coverage(dataset, {"tool": tool, "camera": cam})
    templates = [tool, cam]
    problem = _Problem(dataset, templates, frames, opts.orientation_weight)
    x_init = pack(templates)
    c_init = cost(x_init, problem)
    rng = np.random.default_rng(opts.seed)

    best = None
    total_iters = 0
    for k in range(max(1, opts.restarts)):
        if k == 0:
            x0 = x_init
        else:
            starts = [
                perturb_model(m, rng, opts.axis_tilt_rad, opts.axis_shift_m, opts.scale_jitter, opts.offset_jitter)
                for m in templates
            ]
            x0 = pack(starts)
        trace = levenberg_marquardt(problem, x0, templates, opts.max_iters, opts.tol)
        total_iters += trace.iterations
        if np.isfinite(trace.cost) and (best is None or trace.cost < best.cost):
            best = trace

    converged = best is not None and best.converged and best.cost <= c_init
    if best is None or best.cost > c_init:
        x_final, c_final = x_init, c_init
    else:
        x_final, c_final = best.x, best.cost
    tool_c, cam_c = unpack(x_final, templates)
    before = evaluate(tool, cam, frames, dataset)
    after = evaluate(tool_c, cam_c, frames, dataset)
    return CalibrationResult(
        tool_model=tool_c,
        cam_model=cam_c,
        per_axis_mean_error=after["per_axis_mean_error"],
        per_axis_std=after["per_axis_std"],
        initial_mean_error=before["per_axis_mean_error"],
        initial_std=before["per_axis_std"],
        iterations=total_iters,
        converged=bool(converged),
        initial_cost=c_init,
        final_cost=c_final,
        restarts=max(1, opts.restarts),
        n_variables=n_variables(templates),
        runtime_s=time.perf_counter() - start,
    )


# ------------------------------------------------------- synthetic datasets


@dataclass(frozen=True)
class SyntheticWorld:
    """Ground truth behind a synthetic calibration experiment.

    ``nominal_*`` is what the stock kinematics believe (unit remap, textbook
    twists, setup-joint base estimates); ``true_*`` generates measurements.
    ``true_frames`` are the base placements measured with base markers.
    """

    nominal_tool: ChainModel
    nominal_cam: ChainModel
    nominal_frames: FrameGraph
    true_tool: ChainModel
    true_cam: ChainModel
    true_frames: FrameGraph

    def to_dict(self) -> dict:
        from .chain import chains_to_dict

        return {
            "nominal": chains_to_dict(self.nominal_tool, self.nominal_cam, self.nominal_frames),
            "true": chains_to_dict(self.true_tool, self.true_cam, self.true_frames),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticWorld":
        from .chain import chains_from_dict

        return cls(*chains_from_dict(d["nominal"]), *chains_from_dict(d["true"]))


def make_world(tool: ChainModel, cam: ChainModel, frames: FrameGraph, rng: np.random.Generator,
               scale_error: float = 0.05, base_offset_m: float = 0.05, base_tilt_rad: float = np.deg2rad(5.0),
               axis_tilt_rad: float = np.deg2rad(1.5), axis_shift_m: float = 0.002,
               offset_error: float = 0.02) -> SyntheticWorld:
    """Perturb a nominal setup into a ground truth.

    Encoder scales are off by up to ``scale_error`` (uniform), joint zero
    offsets by up to ``offset_error`` (rad or m), and each true base sits up
    to ``base_offset_m`` (norm) and ``base_tilt_rad`` away from its nominal
    estimate.
    """
    trues = []
    for m in (tool, cam):
        g = perturb_model(m, rng, axis_tilt_rad, axis_shift_m, 0.0, 0.0)
        scale = m.remap_scale * (1.0 + rng.uniform(-scale_error, scale_error, size=m.n_joints))
        offset = m.remap_offset + rng.uniform(-offset_error, offset_error, size=m.n_joints)
        trues.append(g.with_params(remap_scale=scale, remap_offset=offset))

    def _offset(p: Pose) -> Pose:
        d = rng.normal(size=3)
        d *= rng.uniform(0.5, 1.0) * base_offset_m / np.linalg.norm(d)
        ax = rng.normal(size=3)
        ax *= rng.uniform(0.0, base_tilt_rad) / np.linalg.norm(ax)
        return compose(Pose.from_rotvec(ax, d), p)

    true_frames = FrameGraph(_offset(frames.g_hr), _offset(frames.g_hs))
    nominal = [m.with_params(remap_scale=np.ones(m.n_joints), remap_offset=np.zeros(m.n_joints)) for m in (tool, cam)]
    return SyntheticWorld(nominal[0], nominal[1], frames, trues[0], trues[1], true_frames)


def _observe(model: ChainModel, base: Pose, q: np.ndarray, rng, noise_m: float, rot_noise_rad: float,
             frames_averaged: int) -> list[Pose]:
    from .chain import forward_kinematics

    out = []
    for row in q:
        g = compose(base, forward_kinematics(model, row))
        if noise_m > 0 or rot_noise_rad > 0:
            dp = rng.normal(scale=noise_m, size=(frames_averaged, 3)).mean(axis=0)
            dr = rng.normal(scale=rot_noise_rad, size=(frames_averaged, 3)).mean(axis=0)
            g = Pose(Pose.from_rotvec(dr).rotation @ g.rotation, g.translation + dp)
        out.append(g)
    return out


def sweep_configurations(model: ChainModel, steps: int = 25) -> np.ndarray:
    """Each joint from its minimum to maximum in ``steps`` steps, the rest at zero."""
    if model.joint_limits is None:
        raise ValueError(f"{model.kind} chain has no joint limits configured")
    rows = []
    for j in range(model.n_joints):
        lo, hi = model.joint_limits[j]
        for val in np.linspace(lo, hi, steps):
            q = np.zeros(model.n_joints)
            q[j] = val
            rows.append(q)
    return np.array(rows)


def random_configurations(model: ChainModel, rng: np.random.Generator, count: int) -> np.ndarray:
    lim = model.joint_limits
    return rng.uniform(lim[:, 0], lim[:, 1], size=(count, model.n_joints))


def synthesize_dataset(world: SyntheticWorld, configs: dict[str, np.ndarray], rng: np.random.Generator,
                       noise_m: float = 0.0005, frames_averaged: int = 10,
                       rot_noise_rad: float = 0.0) -> CalibrationDataset:
    recs = []
    for arm, model in (("tool", world.true_tool), ("camera", world.true_cam)):
        q = configs[arm]
        poses = _observe(model, world.true_frames.base(arm), q, rng, noise_m, rot_noise_rad, frames_averaged)
        recs += [Record(arm, row, g, frames_averaged) for row, g in zip(q, poses)]
    return CalibrationDataset(tuple(recs))


def sweep_dataset(world: SyntheticWorld, rng: np.random.Generator, steps: int = 25, noise_m: float = 0.0005,
                  frames_averaged: int = 10, rot_noise_rad: float = 0.0) -> CalibrationDataset:
    configs = {
        "tool": sweep_configurations(world.nominal_tool, steps),
        "camera": sweep_configurations(world.nominal_cam, steps),
    }
    return synthesize_dataset(world, configs, rng, noise_m, frames_averaged, rot_noise_rad)


def heldout_dataset(world: SyntheticWorld, rng: np.random.Generator, count: int = 50, noise_m: float = 0.0005,
                    frames_averaged: int = 10) -> CalibrationDataset:
    configs = {
        "tool": random_configurations(world.nominal_tool, rng, count),
        "camera": random_configurations(world.nominal_cam, rng, count),
    }
    return synthesize_dataset(world, configs, rng, noise_m, frames_averaged)
