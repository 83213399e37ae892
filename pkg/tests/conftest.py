import numpy as np
import pytest

from ppwald.core import TimeGrid
from ppwald.simulate import scenario, simulate_dataset


@pytest.fixture(scope="session")
def grid():
    return TimeGrid.covering()


@pytest.fixture(scope="session")
def data_1a_800():
    return simulate_dataset(scenario("1a"), 800, 20240)


@pytest.fixture(scope="session")
def data_1a_40():
    return simulate_dataset(scenario("1a"), 40, 11)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------------------
# acceptance report: one PASS/FAIL line per criterion, repeated in the summary

_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criterion")


@pytest.fixture
def acceptance(request):
    lines = request.config.stash[_ACCEPTANCE]

    def report(criterion, passed: bool, detail: str):
        line = f"criterion {criterion:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        assert passed, line

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
