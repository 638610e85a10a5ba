import os
import sys

import numpy as np
import pytest

# flat layout: make engine/, adapter/, app.py importable without installing
ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_pair(rng):
    """A random 12 x 3 / 12 x 2 sample pair."""
    return rng.standard_normal((12, 3)), rng.standard_normal((12, 2))
