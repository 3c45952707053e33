import numpy as np
import pytest

from autodissect.chain import ChainModel, load_chains
from autodissect.cli import bundled
from autodissect.se3 import PRISMATIC, REVOLUTE, random_twist
from autodissect.stereo import CameraRig


@pytest.fixture(scope="session")
def rig():
    return CameraRig(1000.0, (320.0, 240.0), 0.005, (640, 480))


@pytest.fixture(scope="session")
def nominal():
    return load_chains(bundled("chains.json"))


def random_chain(rng, kind="tool", remap=True):
    n = 6 if kind == "tool" else 4
    classes = [REVOLUTE] * n
    classes[2] = PRISMATIC
    twists = [random_twist(rng, c, 0.2) for c in classes]
    scale = rng.uniform(0.8, 1.2, n) if remap else np.ones(n)
    offset = rng.uniform(-0.2, 0.2, n) if remap else np.zeros(n)
    return ChainModel(kind, twists, scale, offset)


def textured(rng, shape, smooth=1.0):
    """Random 8-bit texture with some spatial correlation."""
    from scipy import ndimage

    img = ndimage.gaussian_filter(rng.uniform(0, 255, shape), smooth)
    img = (img - img.min()) / (img.max() - img.min()) * 255
    return np.rint(img).astype(np.uint8)
