import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

REFERENCE_ANGLES = (np.pi, 0.0, 5 * np.pi / 8, 11 * np.pi / 10)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def random_units(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)
