import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from autodissect.io import read_disparity_png, read_image, read_ply, write_disparity_png, write_image, write_ply
from autodissect.stereo import DisparityMap, disparity_to_cloud


@pytest.mark.parametrize("shape", [(7, 9), (7, 9, 3)])
def test_image_round_trip(tmp_path, shape):
    img = np.random.default_rng(0).integers(0, 256, shape, dtype=np.uint8)
    write_image(tmp_path / "a.png", img)
    assert np.array_equal(read_image(tmp_path / "a.png"), img)


def test_write_image_rejects_float(tmp_path):
    with pytest.raises(ValueError):
        write_image(tmp_path / "a.png", np.zeros((3, 3)))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (5, 6), elements=st.floats(0, 200)), arrays(bool, (5, 6)))
def test_disparity_png_round_trip(tmp_path_factory, values, holes):
    path = tmp_path_factory.mktemp("d") / "d.png"
    d = np.where(holes, np.nan, np.round(values * 16) / 16)
    write_disparity_png(path, DisparityMap(d))
    back = read_disparity_png(path).values
    assert np.array_equal(np.isnan(back), holes)
    assert np.array_equal(back[~holes], d[~holes])


def test_disparity_png_quantises_to_sixteenth(tmp_path):
    d = np.array([[1.03, 2.5], [np.nan, 0.0]])
    write_disparity_png(tmp_path / "d.png", DisparityMap(d))
    back = read_disparity_png(tmp_path / "d.png").values
    assert np.nanmax(np.abs(back - d)) <= 1 / 32
    with pytest.raises(ValueError):
        write_disparity_png(tmp_path / "e.png", DisparityMap(np.full((2, 2), 5000.0)))


def test_ply_round_trip(tmp_path, rig):
    rng = np.random.default_rng(1)
    d = rng.uniform(20, 80, (6, 8))
    d[rng.random(d.shape) < 0.3] = np.nan
    cloud = disparity_to_cloud(DisparityMap(d), rig)
    write_ply(tmp_path / "c.ply", cloud)
    back = read_ply(tmp_path / "c.ply")
    assert back.shape == cloud.shape
    assert np.array_equal(back.valid, cloud.valid)
    assert np.allclose(back.points[back.valid], cloud.points[cloud.valid], rtol=1e-6)
    assert np.all(np.isnan(back.points[~back.valid]))


def test_ply_rejects_other_files(tmp_path):
    (tmp_path / "x.ply").write_bytes(b"not a ply")
    with pytest.raises(ValueError):
        read_ply(tmp_path / "x.ply")
