import numpy as np
import pytest

from hwformer.model import preset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy64():
    """Toy architecture in 64-bit precision for exact and gradient tests."""
    return preset("toy", precision="float64")
