import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from autodissect.perception import (
    AnnotationError,
    InstrumentKeypoints,
    Keypoint,
    SceneNoise,
    SceneRenderer,
    SegmentationFrame,
    SyntheticScene,
    border_confidence,
    load_annotations,
    parse_annotations,
    random_scene,
    rasterize_polygon,
    render_scene,
    to_coco,
    trace_mask,
)

TIP = np.array([0.002, 0.004, 0.095])


@pytest.fixture(scope="module")
def scene(rig):
    return SyntheticScene(rig=rig, seed=3)


@pytest.fixture(scope="module")
def frame(scene):
    return render_scene(scene, TIP, seed=0)


def _doc(anns, cats=None, w=100, h=80):
    cats = cats or [
        {"id": 1, "name": "gallbladder"},
        {"id": 2, "name": "liver"},
        {"id": 3, "name": "PCH", "keypoints": ["TipRight", "TipLeft", "TipCenter", "Edge", "Head"]},
    ]
    return {"images": [{"id": 7, "width": w, "height": h}], "categories": cats, "annotations": anns}


def test_rectangle_polygon_area():
    m = rasterize_polygon([10, 10, 60, 10, 60, 60, 10, 60], 100, 80)
    assert m.sum() == 2500
    assert m[10, 10] and m[59, 59] and not m[60, 60]


def test_missing_categories_flagged():
    ann = parse_annotations(_doc([]))
    assert not ann.frame.primary_mask.any()
    assert set(ann.missing) == {"primary", "background", "instrument"}
    assert not ann.complete


def test_parse_polygons_and_keypoints():
    doc = _doc([
        {"image_id": 7, "category_id": 1, "segmentation": [[0, 0, 40, 0, 40, 80, 0, 80]]},
        {"image_id": 7, "category_id": 2, "segmentation": [[50, 0, 100, 0, 100, 80, 50, 80]]},
        {"image_id": 7, "category_id": 3, "keypoints": [45, 40, 2, 47, 41, 2, 0, 0, 0, 60, 20, 1, 70, 10, 2]},
    ])
    ann = parse_annotations(doc)
    assert ann.complete
    assert ann.frame.primary_mask.sum() == 40 * 80
    assert ann.frame.background_mask.sum() == 50 * 80
    kps = ann.keypoints
    assert set(kps.points) == {"tip_right", "tip_left", "edge", "head"}
    assert kps.get("tip_right").x == 45 and kps.instrument_kind == "PCH"


@pytest.mark.parametrize(
    "doc",
    [
        {"images": [], "categories": [], "annotations": []},
        {"images": [{"id": 1, "width": 10, "height": 10}]},
        _doc([{"category_id": 9, "segmentation": [[0, 0, 1, 0, 1, 1]]}]),
        _doc([{"category_id": 1, "segmentation": [[0, 0, 500, 0, 500, 10]]}]),
        _doc([{"category_id": 1, "segmentation": {"counts": "abc"}}]),
        _doc([], cats=[{"id": 1, "name": "spleen"}]),
    ],
)
def test_malformed_annotations(doc):
    with pytest.raises(AnnotationError):
        parse_annotations(doc)


def test_overlapping_masks_rejected():
    a = np.zeros((20, 20), bool)
    a[:, :12] = True
    b = np.zeros((20, 20), bool)
    b[:, 8:] = True
    with pytest.raises(ValueError):
        SegmentationFrame(a, b)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rasterize_trace_roundtrip(seed):
    rng = np.random.default_rng(seed)
    mask = ndimage.gaussian_filter(rng.uniform(size=(40, 50)), 3) > 0.5
    again = np.zeros_like(mask)
    for poly in trace_mask(mask):
        again ^= rasterize_polygon(poly, 50, 40)
    band = ndimage.binary_dilation(mask ^ ndimage.binary_erosion(mask, border_value=1), iterations=1)
    assert not np.any((mask ^ again) & ~band)


def test_coco_roundtrip(frame, tmp_path):
    path = tmp_path / "ann.json"
    path.write_text(json.dumps(to_coco(frame.segmentation, frame.keypoints)))
    ann = load_annotations(path)
    diff = ann.frame.primary_mask ^ frame.segmentation.primary_mask
    assert diff.sum() <= 0.01 * frame.segmentation.primary_mask.sum()
    tr = ann.keypoints.get("tip_right")
    assert abs(tr.x - frame.keypoints.get("tip_right").x) < 1e-9


def test_malformed_json_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(AnnotationError):
        load_annotations(p)


def test_border_confidence():
    assert border_confidence(100, 100, (640, 480)) == (1.0, True)
    c, inside = border_confidence(0, 100, (640, 480))
    assert inside and abs(c - 0.2) < 1e-12
    assert border_confidence(-1, 5, (640, 480)) == (0.0, False)
    with pytest.raises(ValueError):
        Keypoint(1, 1, 1.5)


def test_noiseless_keypoint_is_projection(scene, frame):
    u, v, _ = scene.rig.project(TIP)
    kp = frame.keypoints.get("tip_right")
    assert kp.x == u and kp.y == v


def test_fronto_parallel_disparities(rig):
    for depth, disp in ((0.10, 50.0), (0.12, 1000 * 0.005 / 0.12)):
        sc = SyntheticScene(rig=rig, primary_depth_m=depth, background_depth_m=depth, ridge_height_m=0.0)
        d = SceneRenderer(sc).ground_truth_disparity(None)
        assert np.allclose(d, disp, rtol=1e-12)
    assert abs(1000 * 0.005 / 0.12 - 41.67) < 0.01


def test_dropout_removes_keypoints(rig):
    sc = SyntheticScene(rig=rig, noise=SceneNoise(dropout_prob=1.0))
    fr = render_scene(sc, TIP)
    assert fr.keypoints.empty


def test_rendered_pair_matches_disparity(frame):
    h, w = frame.left.shape
    d = frame.disparity.values
    vs, us = np.mgrid[0:h, 0:w].astype(float)
    src = us - d
    warped = ndimage.map_coordinates(frame.right.astype(float), [vs, src], order=1)
    # occluded pixels: the instrument edge and everything left of the image
    occluded = ndimage.binary_dilation(np.abs(ndimage.sobel(d, axis=1)) > 2.0, iterations=3)
    ok = (src >= 1) & ~occluded
    assert np.mean(np.abs(warped[ok] - frame.left[ok])) < 2.0


def test_masks_respect_invariants(frame):
    seg = frame.segmentation
    assert not np.any(seg.primary_mask & seg.background_mask)
    assert seg.primary_mask.any() and seg.background_mask.any()
    # the instrument occludes tissue labels
    u, v = (int(round(c)) for c in (frame.instrument.u, frame.instrument.v))
    assert not seg.primary_mask[v, u] and not seg.background_mask[v, u]


def test_render_is_deterministic(scene):
    a = render_scene(scene, TIP, seed=1)
    b = render_scene(scene, TIP, seed=1)
    assert np.array_equal(a.left, b.left) and np.array_equal(a.right, b.right)


def test_tip_behind_camera_rejected(scene):
    with pytest.raises(ValueError):
        render_scene(scene, [0, 0, -0.1])


def test_scene_dict_roundtrip(rig):
    sc = random_scene(5, rig, SceneNoise(keypoint_noise_px=2.0))
    assert SyntheticScene.from_dict(json.loads(json.dumps(sc.to_dict()))) == sc
    with pytest.raises(ValueError):
        SyntheticScene.from_dict({**sc.to_dict(), "bogus": 1})


def test_empty_keypoints():
    assert InstrumentKeypoints().empty
