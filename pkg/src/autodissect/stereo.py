"""Dense stereo: bilateral pre-filter, census/SGM disparity, and metric lifting.

All 2D work happens in the left rectified frame. Disparity ``d`` relates a
left pixel ``(u, v)`` to the right pixel ``(u - d, v)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

INVALID = np.nan

CENSUS_RADIUS = 2  # 5x5 window
CENSUS_BITS = (2 * CENSUS_RADIUS + 1) ** 2 - 1


@dataclass(frozen=True)
class CameraRig:
    """Rectified stereo intrinsics shared by both cameras."""

    focal_px: float
    principal_point: tuple[float, float]
    baseline_m: float
    image_size: tuple[int, int]  # (width, height)

    def __post_init__(self):
        if not self.focal_px > 0:
            raise ValueError(f"focal_px must be positive, got {self.focal_px}")
        if not self.baseline_m > 0:
            raise ValueError(f"baseline_m must be positive, got {self.baseline_m}")
        object.__setattr__(self, "principal_point", tuple(float(c) for c in self.principal_point))
        object.__setattr__(self, "image_size", tuple(int(s) for s in self.image_size))

    @property
    def cx(self) -> float:
        return self.principal_point[0]

    @property
    def cy(self) -> float:
        return self.principal_point[1]

    def project(self, point) -> tuple[float, float, float]:
        """Left-camera pixel ``(u, v)`` and disparity of a 3D point (meters)."""
        x, y, z = (float(c) for c in point)
        if z <= 0:
            raise ValueError("point is behind the camera")
        u = self.focal_px * x / z + self.cx
        v = self.focal_px * y / z + self.cy
        return u, v, self.focal_px * self.baseline_m / z

    def to_dict(self) -> dict:
        return {
            "focal_px": self.focal_px,
            "principal_point": list(self.principal_point),
            "baseline_m": self.baseline_m,
            "image_size": list(self.image_size),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraRig":
        return cls(
            focal_px=float(d["focal_px"]),
            principal_point=tuple(d["principal_point"]),
            baseline_m=float(d["baseline_m"]),
            image_size=tuple(d["image_size"]),
        )


@dataclass(frozen=True)
class SgmParams:
    # defaults are the values used on the endoscope images
    min_disparity: int = 0
    num_disparities: int = 256
    p1: int = 30
    p2: int = 210
    uniqueness_ratio: float = 3

    def __post_init__(self):
        if self.num_disparities <= 0 or self.num_disparities % 16:
            raise ValueError("num_disparities must be a positive multiple of 16")
        if not 0 < self.p1 < self.p2:
            raise ValueError("penalties must satisfy 0 < p1 < p2")
        if self.uniqueness_ratio < 0:
            raise ValueError("uniqueness_ratio must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "min_disparity": self.min_disparity,
            "num_disparities": self.num_disparities,
            "p1": self.p1,
            "p2": self.p2,
            "uniqueness_ratio": self.uniqueness_ratio,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SgmParams":
        return cls(
            min_disparity=int(d.get("min_disparity", 0)),
            num_disparities=int(d.get("num_disparities", 256)),
            p1=int(d.get("p1", 30)),
            p2=int(d.get("p2", 210)),
            uniqueness_ratio=float(d.get("uniqueness_ratio", 3)),
        )


@dataclass(frozen=True)
class DisparityMap:
    """Subpixel disparities on the left image grid; NaN marks invalid pixels."""

    values: np.ndarray
    min_disparity: int = 0
    num_disparities: int = 256

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def at(self, u: int, v: int) -> float:
        return float(self.values[v, u])


@dataclass(frozen=True)
class PointCloud:
    """Grid-aligned 3D points: ``points[v, u]`` is the lift of left pixel (u, v)."""

    points: np.ndarray  # (H, W, 3), meters
    valid: np.ndarray  # (H, W) bool

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape

    def pixels(self) -> np.ndarray:
        """(u, v) provenance of every valid point, row-major order."""
        vs, us = np.nonzero(self.valid)
        return np.stack([us, vs], axis=1)


def to_gray(image: np.ndarray) -> np.ndarray:
    """Luma-convert color input (ITU-R 601 weights) and clamp to 8-bit levels."""
    img = np.asarray(image)
    if img.ndim == 3:
        img = img[..., :3].astype(np.float64) @ np.array([0.299, 0.587, 0.114])
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def bilateral_filter(image, spatial_sigma: float = 3.0, range_sigma: float = 25.0) -> np.ndarray:
    """Edge-preserving smoothing with a truncated (2 sigma) Gaussian window.

    Returns float64; every output is a convex combination of input values so
    the output range stays inside the input range.
    """
    if spatial_sigma <= 0 or range_sigma <= 0:
        raise ValueError("sigmas must be positive")
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ValueError("expected a nonempty 2D grayscale image")
    radius = max(1, int(np.ceil(2 * spatial_sigma)))
    padded = np.pad(img, radius, mode="reflect") if min(img.shape) > radius else np.pad(img, radius, mode="edge")
    h, w = img.shape
    num = np.zeros_like(img)  # weighted sum of differences to the center
    den = np.zeros_like(img)
    inv_s = -0.5 / spatial_sigma**2
    inv_r = -0.5 / range_sigma**2
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            r2 = dx * dx + dy * dy
            if r2 > radius * radius:
                continue
            shifted = padded[radius + dy : radius + dy + h, radius + dx : radius + dx + w]
            diff = shifted - img
            wgt = np.exp(r2 * inv_s + diff**2 * inv_r)
            num += wgt * diff
            den += wgt
    return img + num / den


def census_transform(image: np.ndarray, radius: int = CENSUS_RADIUS) -> np.ndarray:
    """Bit i is set when neighbor i is strictly darker than the center pixel."""
    img = np.asarray(image, dtype=np.int16)
    h, w = img.shape
    padded = np.pad(img, radius, mode="edge")
    codes = np.zeros((h, w), dtype=np.uint32)
    bit = 0
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dx == 0 and dy == 0:
                continue
            neigh = padded[radius + dy : radius + dy + h, radius + dx : radius + dx + w]
            codes |= (neigh < img).astype(np.uint32) << np.uint32(bit)
            bit += 1
    return codes


def census_cost_volume(left: np.ndarray, right: np.ndarray, params: SgmParams) -> tuple[np.ndarray, np.ndarray]:
    """Hamming costs ``C[v, u, k]`` for disparity ``min_disparity + k``.

    Candidates whose right pixel falls outside the image are costed against
    the replicated border column, so they neither attract nor repel the path
    aggregation; the returned ``inside`` mask (u, k) keeps them from winning.
    """
    cl = census_transform(left)
    cr = census_transform(right)
    h, w = cl.shape
    n = params.num_disparities
    cost = np.empty((h, w, n), dtype=np.uint8)
    us = np.arange(w)
    inside = np.zeros((w, n), dtype=bool)
    for k in range(n):
        d = params.min_disparity + k
        src = us - d
        inside[:, k] = (src >= 0) & (src < w)
        cost[:, :, k] = np.bitwise_count(cl ^ cr[:, np.clip(src, 0, w - 1)]).astype(np.uint8)
    return cost, inside


def _path_step(cost_line: np.ndarray, prev: np.ndarray, p1: int, p2: int) -> np.ndarray:
    # prev: (..., n) aggregated costs of the predecessor pixels; int16 suffices
    # since every aggregated value is bounded by max cost + p2.
    prev_min = prev.min(axis=-1, keepdims=True)
    best = np.minimum(prev, prev_min + p2)
    np.minimum(best[..., 1:], prev[..., :-1] + p1, out=best[..., 1:])
    np.minimum(best[..., :-1], prev[..., 1:] + p1, out=best[..., :-1])
    best -= prev_min
    best += cost_line
    return best


def aggregate_costs(cost: np.ndarray, p1: int, p2: int) -> np.ndarray:
    """Sum of path costs along the 4 cardinal and 4 diagonal scanline directions.

    Integer arithmetic throughout, so the result does not depend on the order
    in which paths are accumulated.
    """
    h, w, n = cost.shape
    if CENSUS_BITS + p2 + p1 > np.iinfo(np.int16).max // 8:
        raise ValueError("penalties too large for 16-bit aggregation")
    total = np.zeros((h, w, n), dtype=np.int16)
    c16 = cost.astype(np.int16)

    # Row sweeps carry three directions at once: vertical, and the two diagonals.
    for rows in (range(h), range(h - 1, -1, -1)):
        prev = np.zeros((3, w, n), dtype=np.int16)
        shifted = np.zeros_like(prev)
        for y in rows:
            shifted[0] = prev[0]
            shifted[1, 1:] = prev[1, :-1]
            shifted[1, 0] = 0
            shifted[2, :-1] = prev[2, 1:]
            shifted[2, -1] = 0
            prev = _path_step(c16[y], shifted, p1, p2)
            total[y] += prev[0]
            total[y] += prev[1]
            total[y] += prev[2]

    for cols in (range(w), range(w - 1, -1, -1)):
        prev = np.zeros((h, n), dtype=np.int16)
        for x in cols:
            prev = _path_step(c16[:, x], prev, p1, p2)
            total[:, x] += prev
    return total


def select_disparity(total: np.ndarray, inside: np.ndarray, params: SgmParams) -> np.ndarray:
    """Winner-take-all with uniqueness rejection and parabolic subpixel refinement."""
    h, w, n = total.shape
    big = np.iinfo(np.int32).max // 4
    s = np.where(inside[None, :, :], total.astype(np.int32), big)
    best_k = np.argmin(s, axis=-1)
    best = np.take_along_axis(s, best_k[..., None], axis=-1)[..., 0]

    ks = np.arange(n)
    far = np.abs(ks[None, None, :] - best_k[..., None]) > 1
    second = np.where(far, s, big).min(axis=-1)
    ratio = params.uniqueness_ratio
    # no competitor at all means uniqueness cannot be established either
    ambiguous = (second >= big) | (best.astype(np.float64) * (100 + ratio) >= 100.0 * second)
    no_candidate = best >= big

    km = np.clip(best_k - 1, 0, n - 1)
    kp = np.clip(best_k + 1, 0, n - 1)
    sm = np.take_along_axis(s, km[..., None], axis=-1)[..., 0].astype(np.float64)
    sp = np.take_along_axis(s, kp[..., None], axis=-1)[..., 0].astype(np.float64)
    denom = sm - 2.0 * best + sp
    interior = (best_k > 0) & (best_k < n - 1) & (sm < big) & (sp < big) & (denom > 0)
    offset = np.zeros((h, w))
    np.divide(sm - sp, 2.0 * denom, out=offset, where=interior)

    disp = params.min_disparity + best_k + offset
    disp[ambiguous | no_candidate] = np.nan
    return disp


def sgm_disparity(left, right, params: SgmParams | None = None) -> DisparityMap:
    """Semi-global matching on a rectified grayscale pair."""
    params = params or SgmParams()
    left = to_gray(left)
    right = to_gray(right)
    if left.shape != right.shape:
        raise ValueError(f"image size mismatch: {left.shape} vs {right.shape}")
    if left.shape[1] <= params.num_disparities:
        raise ValueError(
            f"image width {left.shape[1]} must exceed num_disparities {params.num_disparities}"
        )
    cost, inside = census_cost_volume(left, right, params)
    total = aggregate_costs(cost, params.p1, params.p2)
    del cost
    values = select_disparity(total, inside, params)
    return DisparityMap(values, params.min_disparity, params.num_disparities)


def disparity_to_cloud(disparity: DisparityMap, rig: CameraRig) -> PointCloud:
    """Pinhole lift: Z = f B / d, X = (u - cx) Z / f, Y = (v - cy) Z / f."""
    d = np.asarray(disparity.values, dtype=np.float64)
    h, w = d.shape
    valid = np.isfinite(d) & (d > 0)
    z = np.zeros_like(d)
    np.divide(rig.focal_px * rig.baseline_m, d, out=z, where=valid)
    us = np.arange(w, dtype=np.float64)[None, :]
    vs = np.arange(h, dtype=np.float64)[:, None]
    x = (us - rig.cx) * z / rig.focal_px
    y = (vs - rig.cy) * z / rig.focal_px
    pts = np.stack([x, y, z], axis=-1)
    pts[~valid] = np.nan
    return PointCloud(pts, valid)


def cloud_lookup(cloud: PointCloud, pixel, window: int = 2):
    """Componentwise median of valid points within ``window`` px (Chebyshev) of ``pixel``.

    Returns None when the window holds no valid point.
    """
    h, w = cloud.shape
    u, v = (int(round(float(c))) for c in pixel)
    if not (0 <= u < w and 0 <= v < h):
        raise ValueError(f"pixel {pixel} outside {w}x{h} image")
    sl = (slice(max(0, v - window), v + window + 1), slice(max(0, u - window), u + window + 1))
    ok = cloud.valid[sl]
    if not ok.any():
        return None
    return np.median(cloud.points[sl][ok], axis=0)
