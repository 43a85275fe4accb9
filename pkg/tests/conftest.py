import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from landscaper.sim import CuspParams, cusp_model


@pytest.fixture(scope="session")
def bistable_cusp():
    """Symmetric bistable cusp used across tests (stable at +-1, tipping at 0)."""
    return cusp_model(CuspParams(alpha=0.0, beta=1.0, lam=0.0, r=1.0, epsilon=0.5))


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
