"""Shared fixtures: bundled models and their moment systems, built once."""

import numpy as np
import pytest

from qhr import model, moments

FIXTURE_NAMES = ("M1", "M2", "M3", "M4", "MM1", "MM2", "MM3", "MM4", "MM5")


@pytest.fixture(scope="session")
def models():
    return {name: model.load_fixture(name) for name in FIXTURE_NAMES}


@pytest.fixture(scope="session")
def systems(models):
    return {name: moments.build_moment_system(p) for name, p in models.items()}


@pytest.fixture
def rng():
    return np.random.default_rng(987654321)
