import sys
from pathlib import Path

import numpy as np
import pytest

from htelab.core import Dataset
from htelab.rng import RngStream

ROOT = Path(__file__).resolve().parents[1]


def constant_effect_data(rng: RngStream, n: int, tau: float = 0.5, p: int = 5, pi: float = 0.5,
                         noise: float = 1.0) -> Dataset:
    """RCT with a linear prognostic part and a constant effect ``tau``."""
    x = rng.standard_normal(n * p).reshape(n, p)
    t = (rng.uniform(n) < pi).astype(np.int64)
    beta = np.linspace(1.0, -0.5, p)
    y = x @ beta + tau * t + noise * rng.standard_normal(n)
    return Dataset(x, y, t, np.full(n, pi))


@pytest.fixture
def rng():
    return RngStream(12345)


@pytest.fixture(scope="session")
def python_exe():
    return sys.executable
