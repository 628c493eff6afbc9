import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from poselab.geometry import CameraIntrinsics
from poselab.synthetic import make_box_model


@pytest.fixture
def intr():
    return CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)


@pytest.fixture
def box_model():
    return make_box_model()


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
