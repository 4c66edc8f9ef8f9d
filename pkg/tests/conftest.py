import numpy as np
import pytest

from interdiff.configuration import Configuration, TorusBox
from interdiff.potential import PairPotential


@pytest.fixture
def bump():
    return PairPotential.gaussian_bump(1.0, 1.0)


@pytest.fixture
def box10():
    return TorusBox(2, 10.0)


def random_config(box, n, seed=0):
    rng = np.random.default_rng(seed)
    return Configuration(box, rng.uniform(0, box.L, (n, box.d)))
