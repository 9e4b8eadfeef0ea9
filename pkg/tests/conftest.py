import os

import numpy as np
import pytest

from maglattice import designer
from maglattice.fieldcore import LatticeGeometry, PhysicalParams

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS = os.path.join(ROOT, "configs")

# PASS/FAIL lines of the acceptance suite, printed after the run
CRITERIA = {}


def record(number: int, passed: bool, detail: str) -> None:
    CRITERIA[number] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        passed, detail = CRITERIA[n]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {n}: {detail}")


@pytest.fixture(scope="session")
def params():
    # magnetization current 0.2 A, d = 5 um
    return PhysicalParams.from_current(0.2, 5e-6)


@pytest.fixture(scope="session")
def square_spec():
    return designer.load_spec(os.path.join(CONFIGS, "square.toml"))


@pytest.fixture(scope="session")
def triangular_spec():
    return designer.load_spec(os.path.join(CONFIGS, "triangular.toml"))


@pytest.fixture(scope="session")
def square_result(square_spec):
    return designer.run_design(square_spec)


@pytest.fixture(scope="session")
def triangular_result(triangular_spec):
    return designer.run_design(triangular_spec)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(params=[np.pi / 2, np.pi / 3, 1.2], ids=["square", "triangular", "oblique"])
def geometry(request):
    return LatticeGeometry(request.param, 6, 6)
