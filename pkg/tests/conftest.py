import os
import sys

import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from app.manifolds import get_density, get_manifold  # noqa: E402


@pytest.fixture
def sphere():
    return get_manifold("s2")


@pytest.fixture
def circle():
    return get_manifold("circle")


@pytest.fixture
def torus():
    return get_manifold("torus", [1.0, 0.5])


@pytest.fixture
def uniform(sphere):
    return get_density(sphere, {"name": "uniform"})


@pytest.fixture
def tilted(sphere):
    return get_density(sphere, {"name": "tilted", "beta": 0.5})
