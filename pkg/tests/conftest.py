from pathlib import Path

import numpy as np
import pytest

from maskforge.geometry import LandmarkConvention, LandmarkSet
from maskforge.maskkit import load_registry
from maskforge.synthfaces import (
    DEFAULT_FRAME,
    FaceParams,
    canonical_landmarks,
    face_landmarks,
    make_corpus,
    paint_face,
)

REGISTRY_DIR = Path(__file__).resolve().parent.parent / "assets" / "masks"


@pytest.fixture(scope="session")
def registry():
    return load_registry(REGISTRY_DIR)


def frontal_params(scale=55.0, roll=0.0, yaw=0.0):
    w, h = DEFAULT_FRAME
    return FaceParams(
        roll_deg=roll,
        yaw=yaw,
        scale=scale,
        center=(w / 2.0, h * 0.47),
        skin=(209, 163, 127),
        lip=(172, 62, 74),
        iris=(70, 48, 36),
        background=((120, 132, 148), (78, 86, 99)),
    )


@pytest.fixture
def frontal_face():
    params = frontal_params()
    lm = face_landmarks(params, "frontal_demo", DEFAULT_FRAME)
    image = paint_face(params, DEFAULT_FRAME)
    return image, lm


@pytest.fixture
def p5_landmarks():
    points = np.array(
        [[40.0, 50.0], [80.0, 50.0], [60.0, 70.0], [48.0, 90.0], [72.0, 90.0]]
    )
    return LandmarkSet("p5_demo", LandmarkConvention.P5, points, image_size=(120, 140))


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    manifest = make_corpus(root, 24, seed=101)
    return manifest


__all__ = ["canonical_landmarks", "frontal_params"]
