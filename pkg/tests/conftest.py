import numpy as np
import pytest

from lgm_cmprsk import _accel
from lgm_cmprsk.check import Harness
from lgm_cmprsk.config import RunConfig


@pytest.fixture(scope="session")
def harness(tmp_path_factory):
    """Shared acceptance harness so the N=1000 fits run once per session."""
    return Harness(RunConfig(), workdir=tmp_path_factory.mktemp("acceptance"))


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    old = _accel.backend()
    if request.param == "numba" and not _accel.HAS_NUMBA:
        pytest.skip("numba not installed")
    _accel.set_backend(request.param)
    yield request.param
    _accel.set_backend(old)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
