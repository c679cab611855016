import pathlib
import sys

import numpy as np
import pytest

from raildelay import kernels

DATA = pathlib.Path(__file__).parent / "data"


@pytest.fixture(params=["numpy", "numba"])
def backend(request, monkeypatch):
    """Run the test once per kernel implementation."""
    if request.param == "numba" and not kernels.HAVE_NUMBA:
        pytest.skip("numba not installed")
    monkeypatch.setattr(kernels, "risk_set_sums",
                        getattr(kernels, f"risk_set_sums_{request.param}"))
    monkeypatch.setattr(kernels, "expm_batch", getattr(kernels, f"expm_batch_{request.param}"))
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(20170115)


@pytest.fixture
def data_dir():
    return DATA


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(mod.RESULTS, key=lambda k: int(k[2:])):
        terminalreporter.write_line(mod.RESULTS[key])
