import numpy as np
import pytest

from qlbm.lattice import GridSpec, build_model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=["D2Q5", "D3Q7"])
def model(request):
    return build_model(request.param)


def small_grid(model, L=4):
    return GridSpec(L, model.d)
