"""Image, disparity and point-cloud files."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .stereo import DisparityMap, PointCloud

DISPARITY_SCALE = 16  # stored units per pixel of disparity
DISPARITY_INVALID = 65535


def read_image(path) -> np.ndarray:
    """PNG/PGM (or anything Pillow reads) as uint8 gray or RGB."""
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I", "F"):
            raise ValueError(f"{path}: expected an 8-bit image, got mode {im.mode}")
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        return np.asarray(im, dtype=np.uint8).copy()


def write_image(path, image: np.ndarray) -> None:
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        raise ValueError("write_image expects uint8 data")
    Image.fromarray(arr).save(path)


def write_disparity_png(path, disparity: DisparityMap) -> None:
    """16-bit fixed point, 1/16 px per unit; invalid pixels hold 65535."""
    d = np.asarray(disparity.values, dtype=np.float64)
    ok = np.isfinite(d) & (d >= 0)
    q = np.full(d.shape, DISPARITY_INVALID, dtype=np.uint16)
    scaled = np.rint(d[ok] * DISPARITY_SCALE)
    if scaled.size and scaled.max() >= DISPARITY_INVALID:
        raise ValueError("disparity too large for 16-bit fixed point")
    q[ok] = scaled.astype(np.uint16)
    Image.fromarray(q).save(path)


def read_disparity_png(path, min_disparity: int = 0, num_disparities: int = 256) -> DisparityMap:
    with Image.open(path) as im:
        raw = np.asarray(im).astype(np.int64)
    if raw.ndim != 2:
        raise ValueError(f"{path}: disparity image must be single channel")
    d = raw.astype(np.float64) / DISPARITY_SCALE
    d[raw == DISPARITY_INVALID] = np.nan
    return DisparityMap(d, min_disparity, num_disparities)


_PLY_DTYPE = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("alpha", "u1")])


def write_ply(path, cloud: PointCloud) -> None:
    """Binary little-endian PLY holding every grid point in row-major order.

    Invalid points are written as the origin with alpha 0; the grid size is kept
    in a header comment so the organized cloud can be restored.
    """
    h, w = cloud.shape
    rec = np.zeros(h * w, dtype=_PLY_DTYPE)
    pts = np.where(cloud.valid[..., None], cloud.points, 0.0).reshape(-1, 3)
    rec["x"], rec["y"], rec["z"] = pts[:, 0], pts[:, 1], pts[:, 2]
    rec["alpha"] = np.where(cloud.valid.reshape(-1), 255, 0)
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"comment grid {w} {h}\n"
        f"element vertex {h * w}\n"
        "property float x\nproperty float y\nproperty float z\nproperty uchar alpha\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(rec.tobytes())


def read_ply(path) -> PointCloud:
    data = Path(path).read_bytes()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise ValueError(f"{path}: not a PLY file")
    header = data[:end].decode("ascii").splitlines()
    if "format binary_little_endian 1.0" not in header:
        raise ValueError(f"{path}: only binary little-endian PLY is supported")
    grid = count = None
    for line in header:
        parts = line.split()
        if parts[:2] == ["comment", "grid"]:
            grid = int(parts[2]), int(parts[3])
        elif parts[:2] == ["element", "vertex"]:
            count = int(parts[2])
    if count is None:
        raise ValueError(f"{path}: missing vertex count")
    w, h = grid if grid else (count, 1)
    if w * h != count:
        raise ValueError(f"{path}: grid {w}x{h} does not match {count} vertices")
    rec = np.frombuffer(data, dtype=_PLY_DTYPE, count=count, offset=end + len(b"end_header\n"))
    valid = (rec["alpha"] > 0).reshape(h, w)
    pts = np.stack([rec["x"], rec["y"], rec["z"]], axis=-1).astype(np.float64).reshape(h, w, 3)
    pts[~valid] = np.nan
    return PointCloud(pts, valid)
