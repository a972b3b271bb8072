import numpy as np
import pytest

from cahnlab.functionals import SystemParams
from cahnlab.mollifier import MollifierSpec, build_kernel
from cahnlab.torus import PeriodicGrid


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def grid1():
    return PeriodicGrid(1, 64)


@pytest.fixture(scope="session")
def grid2():
    return PeriodicGrid(2, 32)


@pytest.fixture(scope="session")
def params():
    return SystemParams(kappa=2.0, alpha=1.0, beta=0.5, gamma=1.0)


@pytest.fixture(scope="session")
def kernel1(grid1):
    return build_kernel(MollifierSpec(), 0.1, grid1)


@pytest.fixture(scope="session")
def kernel2(grid2):
    return build_kernel(MollifierSpec(), 0.15, grid2)


ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
