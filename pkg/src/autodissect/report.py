"""Plain-text and JSON summaries of calibration results and run logs."""
from __future__ import annotations

import numpy as np

from .servo import RunLog, arrival_summary

AXES = ("x", "y", "z")


def calibration_table(result: dict) -> dict:
    """Before/after per-axis mean and std (mm); held-out numbers when present."""
    src = result.get("heldout") or {
        "before_mean_mm": result["initial_mean_error_mm"],
        "before_std_mm": result["initial_std_mm"],
        "after_mean_mm": result["per_axis_mean_error_mm"],
        "after_std_mm": result["per_axis_std_mm"],
    }
    before = np.asarray(src["before_mean_mm"], dtype=np.float64)
    after = np.asarray(src["after_mean_mm"], dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(after > 0, before / after, np.where(before > 0, np.inf, 1.0))
    return {
        "source": "heldout" if result.get("heldout") else "fit",
        "before_mean_mm": before.tolist(),
        "before_std_mm": list(map(float, src["before_std_mm"])),
        "after_mean_mm": after.tolist(),
        "after_std_mm": list(map(float, src["after_std_mm"])),
        "reduction_factor": factor.tolist(),
    }


def format_calibration_table(table: dict) -> str:
    lines = [
        f"Tip error per axis ({table['source']} data), mm",
        f"{'':14s}" + "".join(f"{a:>16s}" for a in AXES),
    ]
    for label, m, s in (
        ("uncalibrated", table["before_mean_mm"], table["before_std_mm"]),
        ("calibrated", table["after_mean_mm"], table["after_std_mm"]),
    ):
        lines.append(f"{label:14s}" + "".join(f"{mi:9.3f} ± {si:5.3f}" for mi, si in zip(m, s)))
    lines.append(f"{'reduction':14s}" + "".join(f"{f:15.2f}x" for f in table["reduction_factor"]))
    return "\n".join(lines)


def arrival_report(log: RunLog) -> dict:
    """Arrival error statistics; raises ValueError("no arrivals") on an empty log."""
    summary = arrival_summary(log.arrival_errors_mm())
    est = arrival_summary(log.arrival_errors_mm(estimated=True))
    return {
        **summary,
        "estimated_mean_mm": est["mean_mm"],
        "estimated_std_mm": est["std_mm"],
        "outcome": log.outcome,
        "energy_events": len(log.energy_events),
        "iterations": len(log.iterations),
    }


def format_arrival_report(rep: dict) -> str:
    return (
        f"arrival error: {rep['mean_mm']:.3f} ± {rep['std_mm']:.3f} mm "
        f"(n={rep['count']}, max {rep['max_mm']:.3f} mm, outcome {rep['outcome']}, "
        f"{rep['energy_events']} energy events, {rep['iterations']} iterations)"
    )
