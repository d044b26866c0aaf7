import os

import numpy as np
import pytest

from spdelab.grids import SpaceTimeGrid
from spdelab.sampling import RngStream

# smoke | full: full is the acceptance default; smoke for quick iteration
ACCEPT_LEVEL = os.environ.get("SPDELAB_ACCEPT_LEVEL", "full")
SEED = 20260809


@pytest.fixture
def small_grid():
    return SpaceTimeGrid(31, 4e-4, 0.1)


@pytest.fixture
def mid_grid():
    return SpaceTimeGrid(63, 2.5e-4, 0.5)


@pytest.fixture
def rng():
    return RngStream(SEED, 0)


def two_sided(mean, target, stderr, sigmas=3.0, extra=0.0):
    return abs(mean - target) <= sigmas * stderr + extra
