import numpy as np
import pytest

from relightkit import build_stage
from relightkit.synthoracle import default_scene, make_olat_stack, Scene, Sphere, GroundPlane, Camera


@pytest.fixture(scope="session")
def small_scene():
    return default_scene(96)


@pytest.fixture(scope="session")
def small_stack(small_scene):
    return make_olat_stack(small_scene, build_stage())


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
