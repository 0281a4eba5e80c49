import numpy as np
import pytest

from meshboost.inpaint import InpaintNet
from meshboost.pipeline import bundled_model
from meshboost.shape import ShapeModel


@pytest.fixture(scope="session")
def shape_model():
    return ShapeModel.load(bundled_model("shape_toy.w3b"))


@pytest.fixture(scope="session")
def inpaint_net():
    return InpaintNet.load(bundled_model("inpaint_toy.w3b"))


@pytest.fixture
def rng():
    return np.random.default_rng(0)
