"""Tissue masks and instrument keypoints: data model, COCO loader, synthetic scenes.

A provider yields ``(SegmentationFrame, InstrumentKeypoints)`` for the left
rectified image. Two exist: annotation files (COCO polygons + keypoints)
and a synthetic renderer that also produces a consistent stereo pair and its
ground-truth disparity.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .stereo import CameraRig, DisparityMap

KEYPOINT_NAMES = ("tip_right", "tip_left", "tip_center", "edge", "head")
COCO_KEYPOINT_NAMES = ("TipRight", "TipLeft", "TipCenter", "Edge", "Head")

PRIMARY_NAMES = {"primary", "gallbladder", "pig gallbladder", "chicken skin", "skin"}
BACKGROUND_NAMES = {"background", "liver", "pig liver", "chicken meat", "meat", "muscle"}
INSTRUMENT_NAMES = {"pch", "lnd", "fbf"}

# Keypoint confidence decays linearly to this floor within BORDER_PX of the border.
BORDER_PX = 40.0
BORDER_FLOOR = 0.2


class AnnotationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SegmentationFrame:
    primary_mask: np.ndarray
    background_mask: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.primary_mask, dtype=bool)
        b = np.asarray(self.background_mask, dtype=bool)
        if p.shape != b.shape or p.ndim != 2:
            raise ValueError("masks must be 2D and the same size")
        overlap = int(np.count_nonzero(p & b))
        for m in (p, b):
            area = int(np.count_nonzero(m))
            if area and overlap > 0.01 * area:
                raise ValueError(f"masks overlap by {overlap} px, more than 1% of a mask")
        object.__setattr__(self, "primary_mask", p)
        object.__setattr__(self, "background_mask", b)

    @property
    def image_size(self) -> tuple[int, int]:
        h, w = self.primary_mask.shape
        return w, h


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    confidence: float = 1.0
    in_frame: bool = True

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must be in [0, 1]")


@dataclass(frozen=True)
class InstrumentKeypoints:
    """Named keypoints; a missing name means the detector returned nothing."""

    points: dict = field(default_factory=dict)
    instrument_kind: str = "PCH"

    def get(self, name: str) -> Keypoint | None:
        return self.points.get(name)

    @property
    def empty(self) -> bool:
        return not self.points


def border_confidence(x: float, y: float, size: tuple[int, int]) -> tuple[float, bool]:
    w, h = size
    inside = 0.0 <= x <= w - 1 and 0.0 <= y <= h - 1
    if not inside:
        return 0.0, False
    dist = min(x, y, w - 1 - x, h - 1 - y)
    return float(BORDER_FLOOR + (1.0 - BORDER_FLOOR) * min(1.0, dist / BORDER_PX)), True


# ----------------------------------------------------------- rasterisation


def rasterize_polygon(coords, width: int, height: int) -> np.ndarray:
    """Even-odd fill; pixel (x, y) is set when its center (x+.5, y+.5) is inside.

    ``coords`` is a flat COCO list ``[x0, y0, x1, y1, ...]`` or an (N, 2) array.
    """
    pts = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    mask = np.zeros((height, width), dtype=bool)
    if len(pts) < 3:
        return mask
    x0, y0 = pts[:, 0], pts[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    for row in range(height):
        yc = row + 0.5
        crosses = (y0 <= yc) != (y1 <= yc)
        if not np.any(crosses):
            continue
        xs = x0[crosses] + (yc - y0[crosses]) * (x1[crosses] - x0[crosses]) / (y1[crosses] - y0[crosses])
        xs.sort()
        centers = np.arange(width) + 0.5
        count = np.searchsorted(xs, centers, side="right")
        mask[row] = (count % 2) == 1
    return mask


def rasterize_polygons(polys, width: int, height: int) -> np.ndarray:
    """Even-odd union over several rings (holes cancel)."""
    out = np.zeros((height, width), dtype=bool)
    for p in polys:
        out ^= rasterize_polygon(p, width, height)
    return out


def trace_mask(mask: np.ndarray) -> list[list[float]]:
    """Boundary rings of a mask as flat COCO polygons in pixel-corner coordinates."""
    from skimage import measure

    padded = np.pad(np.asarray(mask, dtype=np.float64), 1)
    polys = []
    for c in measure.find_contours(padded, 0.5):
        # contour (row, col) in padded index space; pixel centers sit at +0.5
        xy = np.stack([c[:, 1] - 1 + 0.5, c[:, 0] - 1 + 0.5], axis=1)
        if len(xy) >= 3:
            polys.append(xy.ravel().tolist())
    return polys


# ------------------------------------------------------------ COCO loader


@dataclass(frozen=True)
class Annotations:
    frame: SegmentationFrame
    keypoints: InstrumentKeypoints | None
    missing: tuple[str, ...] = ()

    @property
    def complete(self) -> bool:
        return not self.missing


def _role(name: str) -> str:
    n = name.strip().lower()
    if n in PRIMARY_NAMES:
        return "primary"
    if n in BACKGROUND_NAMES:
        return "background"
    if n in INSTRUMENT_NAMES:
        return "instrument"
    raise AnnotationError(f"unknown category {name!r}")


def parse_annotations(doc: dict, image_id=None) -> Annotations:
    try:
        images = doc["images"]
        cats = {c["id"]: c for c in doc["categories"]}
        anns = doc.get("annotations", [])
    except (KeyError, TypeError) as exc:
        raise AnnotationError(f"malformed annotation file: {exc}") from None
    if not images:
        raise AnnotationError("annotation file lists no images")
    image = images[0] if image_id is None else next((im for im in images if im["id"] == image_id), None)
    if image is None:
        raise AnnotationError(f"no image with id {image_id}")
    w, h = int(image["width"]), int(image["height"])
    roles = {cid: _role(c["name"]) for cid, c in cats.items()}

    primary = np.zeros((h, w), dtype=bool)
    background = np.zeros((h, w), dtype=bool)
    keypoints = None
    for a in anns:
        if a.get("image_id", image["id"]) != image["id"]:
            continue
        cid = a.get("category_id")
        if cid not in cats:
            raise AnnotationError(f"annotation references unknown category id {cid}")
        role = roles[cid]
        if role in ("primary", "background"):
            seg = a.get("segmentation")
            if not isinstance(seg, list):
                raise AnnotationError("only polygon segmentations are supported")
            for poly in seg:
                pts = np.asarray(poly, dtype=np.float64).reshape(-1, 2)
                if np.any(pts < 0) or np.any(pts[:, 0] > w) or np.any(pts[:, 1] > h):
                    raise AnnotationError("polygon outside image")
                m = rasterize_polygon(pts, w, h)
                if role == "primary":
                    primary ^= m
                else:
                    background ^= m
        else:
            kp = np.asarray(a.get("keypoints", []), dtype=np.float64).reshape(-1, 3)
            names = [n for n in cats[cid].get("keypoints", COCO_KEYPOINT_NAMES)]
            scores = a.get("keypoint_scores")
            pts = {}
            for i, (x, y, vis) in enumerate(kp):
                if vis <= 0 or i >= len(names):
                    continue
                key = _keypoint_key(names[i])
                conf, inside = border_confidence(x, y, (w, h))
                conf = float(np.clip(scores[i], 0, 1)) if scores is not None else (1.0 if inside else 0.0)
                pts[key] = Keypoint(float(x), float(y), conf, inside)
            keypoints = InstrumentKeypoints(pts, cats[cid]["name"].upper())
    missing = []
    if not primary.any():
        missing.append("primary")
    if not background.any():
        missing.append("background")
    if keypoints is None:
        missing.append("instrument")
    return Annotations(SegmentationFrame(primary, background), keypoints, tuple(missing))


def _keypoint_key(name: str) -> str:
    table = dict(zip((n.lower() for n in COCO_KEYPOINT_NAMES), KEYPOINT_NAMES))
    n = name.strip().lower()
    if n in table:
        return table[n]
    if n in KEYPOINT_NAMES:
        return n
    raise AnnotationError(f"unknown keypoint name {name!r}")


def load_annotations(path, image_id=None) -> Annotations:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"malformed JSON in {path}: {exc}") from None
    return parse_annotations(doc, image_id)


def to_coco(frame: SegmentationFrame, keypoints: InstrumentKeypoints | None, file_name: str = "left.png",
            primary_name: str = "gallbladder", background_name: str = "liver") -> dict:
    w, h = frame.image_size
    cats = [
        {"id": 1, "name": primary_name, "supercategory": "tissue"},
        {"id": 2, "name": background_name, "supercategory": "tissue"},
        {"id": 3, "name": (keypoints.instrument_kind if keypoints else "PCH"), "supercategory": "instrument",
         "keypoints": list(COCO_KEYPOINT_NAMES)},
    ]
    anns = []
    for cid, m in ((1, frame.primary_mask), (2, frame.background_mask)):
        if m.any():
            anns.append({"id": len(anns) + 1, "image_id": 1, "category_id": cid, "iscrowd": 0,
                         "segmentation": trace_mask(m), "area": int(m.sum())})
    if keypoints is not None and not keypoints.empty:
        flat, scores = [], []
        for name in KEYPOINT_NAMES:
            k = keypoints.get(name)
            if k is None:
                flat += [0.0, 0.0, 0]
                scores.append(0.0)
            else:
                flat += [k.x, k.y, 2]
                scores.append(k.confidence)
        anns.append({"id": len(anns) + 1, "image_id": 1, "category_id": 3, "keypoints": flat,
                     "keypoint_scores": scores, "num_keypoints": sum(1 for s in scores if s > 0)})
    return {"images": [{"id": 1, "width": w, "height": h, "file_name": file_name}], "categories": cats,
            "annotations": anns}


# ------------------------------------------------------- synthetic scenes


@dataclass(frozen=True)
class SceneNoise:
    mask_boundary_jitter_px: float = 0.0
    keypoint_noise_px: float = 0.0
    dropout_prob: float = 0.0


@dataclass(frozen=True)
class SyntheticScene:
    """Two tissues split by the curve ``u = b(v)`` in the left image.

    ``b(v) = boundary_u + boundary_slope (v - cy) + amplitude sin(2 pi v / wavelength + phase)``.
    The primary tissue lies left of the curve. Depth is a per-region plane
    with a raised ridge (closer to the camera) along the junction.
    """

    rig: CameraRig
    boundary_u: float = 320.0
    boundary_slope: float = 0.0
    boundary_amplitude_px: float = 20.0
    boundary_wavelength_px: float = 600.0
    boundary_phase: float = 0.0
    primary_depth_m: float = 0.100
    background_depth_m: float = 0.100
    depth_gradient: tuple[float, float] = (0.0, 0.0)  # dZ per pixel in u and v
    step_width_px: float = 1.5
    ridge_height_m: float = 0.006
    ridge_width_px: float = 6.0
    mask_gap_px: float = 8.0
    mask_margin_px: float = 60.0  # specimen extent: masks stay this far from the image border
    texture_spacing_px: float = 3.0
    image_noise_std: float = 0.0
    instrument_radius_px: float = 8.0
    shaft_width_px: float = 5.0
    shaft_direction: tuple[float, float] = (0.6, -0.8)
    noise: SceneNoise = field(default_factory=SceneNoise)
    seed: int = 0

    def __post_init__(self):
        if min(self.primary_depth_m, self.background_depth_m) - max(self.ridge_height_m, 0.0) <= 0:
            raise ValueError("depth profiles must stay positive")
        d = np.asarray(self.shaft_direction, dtype=np.float64)
        object.__setattr__(self, "shaft_direction", tuple((d / np.linalg.norm(d)).tolist()))

    def boundary(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        return (
            self.boundary_u
            + self.boundary_slope * (v - self.rig.cy)
            + self.boundary_amplitude_px * np.sin(2 * np.pi * v / self.boundary_wavelength_px + self.boundary_phase)
        )

    def tissue_depth(self, u, v) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        s = u - self.boundary(v)
        gu, gv = self.depth_gradient
        plane = gu * (u - self.rig.cx) + gv * (v - self.rig.cy)
        step = 0.5 * (1.0 + np.tanh(s / self.step_width_px))
        z = self.primary_depth_m + (self.background_depth_m - self.primary_depth_m) * step + plane
        if self.ridge_height_m:
            z = z - self.ridge_height_m * np.exp(-0.5 * (s / self.ridge_width_px) ** 2)
        return z

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k not in ("rig", "noise")}
        d["depth_gradient"] = list(self.depth_gradient)
        d["shaft_direction"] = list(self.shaft_direction)
        d["rig"] = self.rig.to_dict()
        d["noise"] = vars(self.noise).copy()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticScene":
        d = dict(d)
        rig = CameraRig.from_dict(d.pop("rig"))
        noise = SceneNoise(**d.pop("noise", {}))
        for k in ("depth_gradient", "shaft_direction"):
            if k in d:
                d[k] = tuple(d[k])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown scene fields: {sorted(unknown)}")
        return cls(rig=rig, noise=noise, **d)


@dataclass(frozen=True)
class InstrumentPose:
    """Left-image footprint of the instrument for a given tip position."""

    u: float
    v: float
    disparity: float
    radius: float
    shaft_width: float
    direction: tuple[float, float]

    def contains(self, u, v) -> np.ndarray:
        du = np.asarray(u, dtype=np.float64) - self.u
        dv = np.asarray(v, dtype=np.float64) - self.v
        disk = du * du + dv * dv <= self.radius**2
        a, b = self.direction
        along = du * a + dv * b
        across = np.abs(-du * b + dv * a)
        shaft = (along >= 0) & (across <= self.shaft_width)
        return disk | shaft


@dataclass(frozen=True, eq=False)
class RenderedFrame:
    left: np.ndarray
    right: np.ndarray
    segmentation: SegmentationFrame
    keypoints: InstrumentKeypoints
    disparity: DisparityMap
    instrument: InstrumentPose | None = None


def _lattice(rng, shape, mean, contrast):
    # cubic B-spline prefilter makes map_coordinates interpolate these samples smoothly
    vals = mean + contrast * rng.uniform(-1.0, 1.0, size=shape)
    return ndimage.spline_filter(vals, order=3)


class SceneRenderer:
    """Renders stereo frames of a scene; tissue geometry and textures are cached."""

    SUPERSAMPLE = 8

    def __init__(self, scene: SyntheticScene, num_disparities: int = 256):
        self.scene = scene
        w, h = scene.rig.image_size
        self.width, self.height = w, h
        rng = np.random.default_rng(np.random.SeedSequence([scene.seed, 7]))
        sp = scene.texture_spacing_px
        self.u_lo = -16.0
        u_hi = w + num_disparities + 16.0
        cols = int(np.ceil((u_hi - self.u_lo) / sp)) + 4
        rows = int(np.ceil((h + 32) / sp)) + 4
        self.spacing = sp
        self.tex = {
            "primary": _lattice(rng, (rows, cols), 150.0, 60.0),
            "background": _lattice(rng, (rows, cols), 95.0, 55.0),
            "instrument": _lattice(rng, (int(np.ceil(2 * (h + w) / sp)) + 8,) * 2, 205.0, 35.0),
        }
        us = np.arange(w, dtype=np.float64)
        vs = np.arange(h, dtype=np.float64)
        self.tissue_depth = scene.tissue_depth(us[None, :], vs[:, None])
        self.tissue_disparity = scene.rig.focal_px * scene.rig.baseline_m / self.tissue_depth
        self.boundary_cols = scene.boundary(vs)

    def instrument_pose(self, tip) -> InstrumentPose:
        u, v, d = self.scene.rig.project(tip)
        return InstrumentPose(u, v, d, self.scene.instrument_radius_px, self.scene.shaft_width_px,
                              self.scene.shaft_direction)

    def disparity_at(self, u, v, inst: InstrumentPose | None) -> np.ndarray:
        rig = self.scene.rig
        d = rig.focal_px * rig.baseline_m / self.scene.tissue_depth(u, v)
        if inst is not None:
            d = np.where(inst.contains(u, v), np.maximum(d, inst.disparity), d)
        return d

    def texture(self, u, v, inst: InstrumentPose | None) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        gu = (u - self.u_lo) / self.spacing + 2.0
        gv = (v + 16.0) / self.spacing + 2.0
        primary = u < self.scene.boundary(v)
        out = np.where(
            primary,
            ndimage.map_coordinates(self.tex["primary"], [gv, gu], order=3, mode="nearest", prefilter=False),
            ndimage.map_coordinates(self.tex["background"], [gv, gu], order=3, mode="nearest", prefilter=False),
        )
        if inst is not None:
            on = inst.contains(u, v)
            if np.any(on):
                n = self.tex["instrument"].shape[0] / 2.0
                iu = (u[on] - inst.u) / self.spacing + n
                iv = (v[on] - inst.v) / self.spacing + n
                out[on] = ndimage.map_coordinates(self.tex["instrument"], [iv, iu], order=3, mode="nearest",
                                                  prefilter=False)
        return out

    def ground_truth_disparity(self, inst: InstrumentPose | None) -> np.ndarray:
        d = self.tissue_disparity
        if inst is None:
            return d.copy()
        us = np.arange(self.width, dtype=np.float64)[None, :]
        vs = np.arange(self.height, dtype=np.float64)[:, None]
        return np.where(inst.contains(us, vs), np.maximum(d, inst.disparity), d)

    def right_source_columns(self, inst: InstrumentPose | None) -> np.ndarray:
        """Left-image column seen by every right-image pixel (visible surface only)."""
        w, h, s = self.width, self.height, self.SUPERSAMPLE
        ul = np.arange(self.u_lo * s, (w + 256 + 8) * s) / s
        vs = np.arange(h, dtype=np.float64)
        d = self.disparity_at(ul[None, :], vs[:, None], inst)
        ur = ul[None, :] - d
        # a sample is hidden when a later (right-hand) sample lands at or left of it
        later_min = np.minimum.accumulate(ur[:, ::-1], axis=1)[:, ::-1]
        later_min = np.concatenate([later_min[:, 1:], np.full((h, 1), np.inf)], axis=1)
        visible = ur < later_min
        cols = np.empty((h, w))
        targets = np.arange(w, dtype=np.float64)
        for row in range(h):
            keep = visible[row]
            cols[row] = np.interp(targets, ur[row, keep], ul[keep])
        return cols

    def render(self, tip=None, seed=None) -> RenderedFrame:
        scene = self.scene
        w, h = self.width, self.height
        if tip is not None and float(np.asarray(tip)[2]) <= 0:
            raise ValueError("instrument tip is behind the camera")
        inst = None if tip is None else self.instrument_pose(tip)
        rng = np.random.default_rng(np.random.SeedSequence([scene.seed, 11] + ([] if seed is None else [int(seed)])))

        us = np.arange(w, dtype=np.float64)[None, :].repeat(h, 0)
        vs = np.arange(h, dtype=np.float64)[:, None].repeat(w, 1)
        left = self.texture(us, vs, inst)
        right = self.texture(self.right_source_columns(inst), vs, inst)
        if scene.image_noise_std > 0:
            left = left + rng.normal(scale=scene.image_noise_std, size=left.shape)
            right = right + rng.normal(scale=scene.image_noise_std, size=right.shape)
        left = np.clip(np.rint(left), 0, 255).astype(np.uint8)
        right = np.clip(np.rint(right), 0, 255).astype(np.uint8)

        disp = DisparityMap(self.ground_truth_disparity(inst))
        seg = self.segmentation(inst, rng)
        kps = self.keypoints(inst, rng)
        return RenderedFrame(left, right, seg, kps, disp, inst)

    def segmentation(self, inst: InstrumentPose | None, rng) -> SegmentationFrame:
        scene = self.scene
        w, h = self.width, self.height
        jitter = np.zeros(h)
        if scene.noise.mask_boundary_jitter_px > 0:
            raw = rng.normal(size=h + 16)
            smooth = ndimage.gaussian_filter1d(raw, 4.0)[8:-8]
            jitter = scene.noise.mask_boundary_jitter_px * smooth / max(smooth.std(), 1e-12)
        us = np.arange(w, dtype=np.float64)[None, :] + 0.5
        b = (self.boundary_cols + jitter)[:, None]
        half = scene.mask_gap_px / 2.0
        primary = us < b - half
        background = us > b + half
        m = scene.mask_margin_px
        vs_c = np.arange(h, dtype=np.float64)[:, None] + 0.5
        roi = (us >= m) & (us <= w - m) & (vs_c >= m) & (vs_c <= h - m)
        primary &= roi
        background &= roi
        if inst is not None:
            vs = np.arange(h, dtype=np.float64)[:, None]
            on = inst.contains(np.arange(w, dtype=np.float64)[None, :], vs)
            primary &= ~on
            background &= ~on
        return SegmentationFrame(primary, background)

    def keypoints(self, inst: InstrumentPose | None, rng) -> InstrumentKeypoints:
        if inst is None:
            return InstrumentKeypoints({}, "PCH")
        noise = self.scene.noise
        a, b = inst.direction
        perp = (-b, a)
        offsets = {
            "tip_right": (0.0, 0.0),
            "tip_left": (6.0 * perp[0], 6.0 * perp[1]),
            "tip_center": (20.0 * a, 20.0 * b),
            "edge": (30.0 * a + 4.0 * perp[0], 30.0 * b + 4.0 * perp[1]),
            "head": (45.0 * a, 45.0 * b),
        }
        pts = {}
        dropped = rng.uniform(size=len(offsets)) < noise.dropout_prob
        jitter = rng.normal(scale=noise.keypoint_noise_px, size=(len(offsets), 2)) if noise.keypoint_noise_px > 0 \
            else np.zeros((len(offsets), 2))
        for i, (name, (du, dv)) in enumerate(offsets.items()):
            if dropped[i]:
                continue
            x = inst.u + du + jitter[i, 0]
            y = inst.v + dv + jitter[i, 1]
            conf, inside = border_confidence(x, y, (self.width, self.height))
            pts[name] = Keypoint(float(x), float(y), conf, inside)
        return InstrumentKeypoints(pts, "PCH")


def render_scene(scene: SyntheticScene, tool_tip=None, seed=None) -> RenderedFrame:
    """Stereo pair, masks, keypoints and ground-truth disparity for a tip position (meters, left camera)."""
    return SceneRenderer(scene).render(tool_tip, seed)


def load_scene(path) -> SyntheticScene:
    return SyntheticScene.from_dict(json.loads(Path(path).read_text()))


def random_scene(seed: int, rig: CameraRig, noise: SceneNoise | None = None) -> SyntheticScene:
    """Scene with a randomly shaped near-vertical boundary; all draws come from ``seed``."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 101]))
    w, _ = rig.image_size
    return SyntheticScene(
        rig=rig,
        boundary_u=float(rng.uniform(0.35, 0.65) * w),
        boundary_slope=float(rng.uniform(-0.25, 0.25)),
        boundary_amplitude_px=float(rng.uniform(0.0, 30.0)),
        boundary_wavelength_px=float(rng.uniform(300.0, 900.0)),
        boundary_phase=float(rng.uniform(0.0, 2 * np.pi)),
        depth_gradient=(float(rng.uniform(-5e-6, 5e-6)), float(rng.uniform(-5e-6, 5e-6))),
        noise=noise or SceneNoise(),
        seed=int(seed),
    )
