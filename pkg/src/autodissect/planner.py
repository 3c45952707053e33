"""Dissection trajectory along the junction of two segmented tissues.

Pipeline: boundary pixels of the primary mask are paired with their nearest
background boundary pixel (k-d tree), the edge point of each pair is the
peak-disparity sample on the segment between them, edge points are thinned
by farthest-first traversal, ordered along their principal axis and lifted
to 3D through the point cloud.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .perception import SegmentationFrame
from .stereo import DisparityMap, PointCloud, cloud_lookup


class PlanningError(RuntimeError):
    pass


@dataclass(frozen=True)
class PlannerConfig:
    k: int = 6
    max_pair_dist_px: float = 40.0
    lookup_window_px: int = 2

    @classmethod
    def from_dict(cls, d: dict) -> "PlannerConfig":
        return cls(**d)


@dataclass(frozen=True, eq=False)
class BoundaryTrajectory:
    waypoints_2d: np.ndarray  # (k, 2) pixels (u, v)
    waypoints_3d: np.ndarray  # (k, 3) meters, left camera frame
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        w2 = np.asarray(self.waypoints_2d, dtype=np.float64).reshape(-1, 2)
        w3 = np.asarray(self.waypoints_3d, dtype=np.float64).reshape(-1, 3)
        if len(w2) != len(w3) or len(w2) < 2:
            raise ValueError("trajectory needs matching 2D/3D waypoint lists of length >= 2")
        if np.any(w3[:, 2] <= 0):
            raise ValueError("every 3D waypoint needs positive depth")
        object.__setattr__(self, "waypoints_2d", w2)
        object.__setattr__(self, "waypoints_3d", w3)

    def __len__(self):
        return len(self.waypoints_3d)

    def spacing(self) -> dict:
        gaps = np.linalg.norm(np.diff(self.waypoints_3d, axis=0), axis=1)
        return {"min_m": float(gaps.min()), "mean_m": float(gaps.mean()), "max_m": float(gaps.max())}

    def to_dict(self) -> dict:
        return {
            "waypoints_2d": self.waypoints_2d.tolist(),
            "waypoints_3d": self.waypoints_3d.tolist(),
            "stats": {**self.stats, "spacing": self.spacing()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoundaryTrajectory":
        from .schemas import validate_trajectory

        validate_trajectory(d)
        return cls(np.array(d["waypoints_2d"]), np.array(d["waypoints_3d"]), dict(d.get("stats", {})))

    def write_json(self, path) -> None:
        from .schemas import validate_trajectory

        d = self.to_dict()
        validate_trajectory(d)
        Path(path).write_text(json.dumps(d, indent=2, sort_keys=True))

    @classmethod
    def read_json(cls, path) -> "BoundaryTrajectory":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["index", "u_px", "v_px", "x_m", "y_m", "z_m"])
            for i, (p2, p3) in enumerate(zip(self.waypoints_2d, self.waypoints_3d)):
                wr.writerow([i, *(repr(float(c)) for c in p2), *(repr(float(c)) for c in p3)])


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """(u, v) of mask pixels with a 4-neighbour outside the mask; the image edge does not count."""
    m = np.asarray(mask, dtype=bool)
    inner = ndimage.binary_erosion(m, structure=ndimage.generate_binary_structure(2, 1), border_value=1)
    vs, us = np.nonzero(m & ~inner)
    return np.stack([us, vs], axis=1)


def nearest_cross_pairs(primary_mask, background_mask, max_pair_dist_px: float = 40.0) -> np.ndarray:
    """Pairs ``[(u_p, v_p, u_b, v_b), ...]``: each primary boundary pixel and its
    nearest background boundary pixel, kept when within ``max_pair_dist_px``."""
    if not np.any(primary_mask) or not np.any(background_mask):
        raise ValueError("both masks must be nonempty")
    src = boundary_pixels(primary_mask)
    dst = boundary_pixels(background_mask)
    tree = cKDTree(dst)
    dist, idx = tree.query(src, k=1, distance_upper_bound=max_pair_dist_px)
    keep = np.isfinite(dist) & (dist <= max_pair_dist_px)
    return np.concatenate([src[keep], dst[idx[keep]]], axis=1).astype(np.int64)


def line_pixels(p0, p1) -> np.ndarray:
    """Bresenham traversal from p0 to p1 inclusive, ordered from p0."""
    x0, y0 = (int(c) for c in p0)
    x1, y1 = (int(c) for c in p1)
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    out = []
    while True:
        out.append((x0, y0))
        if x0 == x1 and y0 == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy
    return np.array(out, dtype=np.int64)


def edge_points(pairs, disparity: DisparityMap, return_dropped: bool = False):
    """Peak-disparity pixel on each pair's segment; ties go to the sample nearest the primary end."""
    d = disparity.values
    h, w = d.shape
    pts = []
    dropped = 0
    for row in np.asarray(pairs).reshape(-1, 4):
        seg = line_pixels(row[:2], row[2:])
        inside = (seg[:, 0] >= 0) & (seg[:, 0] < w) & (seg[:, 1] >= 0) & (seg[:, 1] < h)
        seg = seg[inside]
        vals = d[seg[:, 1], seg[:, 0]] if len(seg) else np.zeros(0)
        ok = np.isfinite(vals)
        if not np.any(ok):
            dropped += 1
            continue
        vals = np.where(ok, vals, -np.inf)
        pts.append(seg[int(np.argmax(vals))])
    out = np.array(pts, dtype=np.int64).reshape(-1, 2)
    return (out, dropped) if return_dropped else out


def farthest_first_downsample(points, k: int) -> np.ndarray:
    """Greedy k-center: seed with the lexicographically smallest point, then
    repeatedly add the point farthest from the chosen set.

    Ties go to the lexicographically smallest candidate, so the result does
    not depend on input order. Returns the chosen points in selection order.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or len(pts) == 0:
        raise ValueError("need a nonempty (n, d) point array")
    n = len(pts)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    order = np.lexsort(pts.T[::-1])
    pts = pts[order]
    chosen = [0]
    dist = np.linalg.norm(pts - pts[0], axis=1)
    for _ in range(k - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(pts - pts[nxt], axis=1))
    return pts[chosen]


def principal_axis(points) -> np.ndarray:
    """Unit first principal direction, signed so its dominant component is positive."""
    pts = np.asarray(points, dtype=np.float64)
    centered = pts - pts.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    axis = vt[0]
    if axis[int(np.argmax(np.abs(axis)))] < 0:
        axis = -axis
    return axis


def order_along_axis(points, axis) -> np.ndarray:
    """Indices sorting points by projection on ``axis``, ties by the orthogonal coordinate."""
    pts = np.asarray(points, dtype=np.float64)
    a = np.asarray(axis, dtype=np.float64)
    along = pts @ a
    ortho = pts @ np.array([-a[1], a[0]])
    return np.lexsort((ortho, along))


def build_trajectory(frame: SegmentationFrame, disparity: DisparityMap, cloud: PointCloud, k: int = 6,
                     config: PlannerConfig | None = None) -> BoundaryTrajectory:
    cfg = config or PlannerConfig(k=k)
    pairs = nearest_cross_pairs(frame.primary_mask, frame.background_mask, cfg.max_pair_dist_px)
    edges, dropped = edge_points(pairs, disparity, return_dropped=True)
    if len(edges) < 2:
        raise PlanningError(f"only {len(edges)} edge points with valid disparity")
    # drop edge points the cloud cannot lift before thinning
    liftable = [e for e in edges if cloud_lookup(cloud, e, cfg.lookup_window_px) is not None]
    uniq = np.unique(np.array(liftable, dtype=np.int64).reshape(-1, 2), axis=0)
    if len(uniq) < 2:
        raise PlanningError("fewer than 2 liftable waypoints")
    chosen = farthest_first_downsample(uniq, min(k, len(uniq)))
    axis = principal_axis(uniq)
    chosen = chosen[order_along_axis(chosen, axis)]
    pts3 = np.array([cloud_lookup(cloud, p, cfg.lookup_window_px) for p in chosen])
    stats = {
        "pairs": int(len(pairs)),
        "edge_points": int(len(edges)),
        "dropped_pairs": int(dropped),
        "ordering_axis": axis.tolist(),
    }
    return BoundaryTrajectory(chosen, pts3, stats)


def overlay_image(frame: SegmentationFrame, trajectory: BoundaryTrajectory, base: np.ndarray | None = None) -> np.ndarray:
    """RGB overlay of masks and numbered waypoints for visual inspection."""
    p = frame.primary_mask
    h, w = p.shape
    img = np.zeros((h, w, 3), dtype=np.float64)
    if base is not None:
        img[:] = np.asarray(base, dtype=np.float64)[..., None] if np.ndim(base) == 2 else base
    img[p] = 0.5 * img[p] + 0.5 * np.array([60.0, 200.0, 60.0])
    b = frame.background_mask
    img[b] = 0.5 * img[b] + 0.5 * np.array([200.0, 60.0, 60.0])
    for i, (u, v) in enumerate(np.rint(trajectory.waypoints_2d).astype(int)):
        yy, xx = np.ogrid[:h, :w]
        dot = (xx - u) ** 2 + (yy - v) ** 2 <= 16
        img[dot] = [255.0, 255.0, 0.0]
    if len(trajectory) >= 2:
        for a, c in zip(trajectory.waypoints_2d[:-1], trajectory.waypoints_2d[1:]):
            for x, y in line_pixels(np.rint(a), np.rint(c)):
                if 0 <= x < w and 0 <= y < h:
                    img[y, x] = [255.0, 255.0, 255.0]
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)
