import numpy as np
import pytest

from stdf_lab.samplers import Sample
from stdf_lab.stdf_oracles import StdfModel


@pytest.fixture
def rng():
    """Fixed RNG for reproducible tests."""
    return np.random.default_rng(42)


@pytest.fixture
def antimonotone_sample():
    """Rows (1,5),(2,4),(3,3),(4,2),(5,1)."""
    column = np.arange(1.0, 6.0)
    return Sample(np.column_stack([column, column[::-1]]))


@pytest.fixture(params=["independence", "comonotone", "logistic"])
def model_2d(request):
    """Each oracle model in dimension 2."""
    theta = 2.0 if request.param == "logistic" else 1.0
    return StdfModel(request.param, 2, theta)
