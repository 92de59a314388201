import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from neuso.graph import from_edges  # noqa: E402


@pytest.fixture
def triangle():
    return from_edges([0, 0, 1], [(0, 1), (1, 2), (0, 2)])


@pytest.fixture
def path3():
    return from_edges([0, 0, 0], [(0, 1), (1, 2)])


@pytest.fixture
def star4():
    """Center 0 (label 1) with four label-0 leaves."""
    return from_edges([1, 0, 0, 0, 0], [(0, i) for i in range(1, 5)])


CRITERIA: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    CRITERIA[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
