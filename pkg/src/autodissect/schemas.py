"""JSON schemas for every file the pipeline writes; checked on write and on read."""
from __future__ import annotations

import jsonschema

_num = {"type": "number"}
_vec3 = {"type": "array", "items": _num, "minItems": 3, "maxItems": 3}
_pose = {"type": "array", "items": _num, "minItems": 12, "maxItems": 12}

RECORD = {
    "type": "object",
    "required": ["arm", "console_angles", "marker_pose", "frames_averaged"],
    "properties": {
        "arm": {"enum": ["tool", "camera"]},
        "console_angles": {"type": "array", "items": _num, "minItems": 4, "maxItems": 6},
        "marker_pose": _pose,
        "frames_averaged": {"type": "integer", "minimum": 1},
    },
}

_joint = {
    "type": "object",
    "required": ["joint", "angular", "linear"],
    "properties": {
        "joint": {"enum": ["revolute", "prismatic"]},
        "angular": _vec3,
        "linear": _vec3,
        "scale": _num,
        "offset": _num,
        "limits": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
    },
}

_chain = {
    "type": "object",
    "required": ["joints"],
    "properties": {"joints": {"type": "array", "items": _joint}, "tip_offset": _pose},
}

CHAINS = {
    "type": "object",
    "required": ["tool", "camera"],
    "properties": {
        "tool": _chain,
        "camera": _chain,
        "frames": {"type": "object", "required": ["g_hr", "g_hs"], "properties": {"g_hr": _pose, "g_hs": _pose}},
    },
}

_errors = {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 3, "maxItems": 3}

CALIBRATION_RESULT = {
    "type": "object",
    "required": ["models", "per_axis_mean_error_mm", "per_axis_std_mm", "iterations", "converged"],
    "properties": {
        "models": CHAINS,
        "per_axis_mean_error_mm": _errors,
        "per_axis_std_mm": _errors,
        "initial_mean_error_mm": _errors,
        "initial_std_mm": _errors,
        "iterations": {"type": "integer", "minimum": 0},
        "converged": {"type": "boolean"},
        "heldout": {"type": "object"},
    },
}

TRAJECTORY = {
    "type": "object",
    "required": ["waypoints_2d", "waypoints_3d", "stats"],
    "properties": {
        "waypoints_2d": {"type": "array", "items": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}, "minItems": 2},
        "waypoints_3d": {"type": "array", "items": _vec3, "minItems": 2},
        "stats": {"type": "object"},
    },
}

RUNLOG = {
    "type": "object",
    "required": ["iterations", "arrivals", "energy_events", "outcome"],
    "properties": {
        "outcome": {"enum": ["done", "aborted"]},
        "iterations": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["iteration", "waypoint", "goal", "tip_estimate", "distance_mm", "phase"],
            },
        },
        "arrivals": {
            "type": "array",
            "items": {"type": "object", "required": ["waypoint", "error_mm", "estimated_error_mm"]},
        },
        "energy_events": {"type": "array", "items": {"type": "object", "required": ["waypoint", "start_ms", "duration_ms"]}},
    },
}


def _check(instance, schema, what: str):
    try:
        jsonschema.validate(instance, schema)
    except jsonschema.ValidationError as exc:
        raise ValueError(f"invalid {what}: {exc.message}") from None


def validate_record(d):
    _check(d, RECORD, "calibration record")
    if len(d["console_angles"]) != (6 if d["arm"] == "tool" else 4):
        raise ValueError("invalid calibration record: angle count does not match arm")


def validate_chains(d):
    _check(d, CHAINS, "chain configuration")


def validate_calibration(d):
    _check(d, CALIBRATION_RESULT, "calibration result")


def validate_trajectory(d):
    _check(d, TRAJECTORY, "trajectory")
    if len(d["waypoints_2d"]) != len(d["waypoints_3d"]):
        raise ValueError("invalid trajectory: 2D and 3D waypoint counts differ")


def validate_runlog(d):
    _check(d, RUNLOG, "run log")
