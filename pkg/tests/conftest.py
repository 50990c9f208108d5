import numpy as np
import pytest

from semdepth import autodiff as ad


@pytest.fixture
def f64():
    with ad.precision(np.float64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA: list[str] = []


@pytest.fixture
def report():
    """Record one summary line per acceptance criterion, printed after the run."""
    def add(number, passed: bool, detail: str):
        _CRITERIA.append(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
    return add


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
