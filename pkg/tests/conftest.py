import numpy as np
import pytest

from aures.tensor import set_default_dtype


@pytest.fixture(autouse=True)
def float64_default():
    """Oracle tests run in double precision; restore it after every test in
    case a test switched the engine to float32."""
    set_default_dtype(np.float64)
    yield
    set_default_dtype(np.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
