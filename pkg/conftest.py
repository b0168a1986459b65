"""Test wiring: render NumPy scalars in doctests as they print under NumPy 1.x."""
import numpy as np
import pytest


@pytest.fixture(autouse=True)
def _legacy_numpy_scalar_repr():
    if int(np.__version__.split(".")[0]) >= 2:
        previous = np.get_printoptions()
        np.set_printoptions(legacy="1.25")
        yield
        np.set_printoptions(**previous)
    else:
        yield
