import numpy as np
import pytest

from fqg.geometry import HanoiParams, build_level
from fqg.measure import MeasureParams


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def hanoi_02():
    return HanoiParams(0.2)


@pytest.fixture(scope="session")
def level2(hanoi_02):
    return build_level(hanoi_02, 2)


@pytest.fixture(scope="session")
def level3(hanoi_02):
    return build_level(hanoi_02, 3)


@pytest.fixture(scope="session")
def mu_01():
    return MeasureParams(0.1)


_VERDICTS = []


@pytest.fixture
def verdict():
    """Record (and print) a one-line pass/fail verdict for an acceptance criterion."""

    def record(criterion: str, ok: bool, detail: str = ""):
        line = f"[{'PASS' if ok else 'FAIL'}] {criterion}" + (f": {detail}" if detail else "")
        _VERDICTS.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
