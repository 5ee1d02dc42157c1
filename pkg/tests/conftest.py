import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ntgcf.graph import graph_from_edges  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def g0():
    """u0 linked to i0 and i1."""
    return graph_from_edges(1, 2, [(0, 0), (0, 1)])


@pytest.fixture
def g1():
    """u0-i0, u0-i1, u1-i0."""
    return graph_from_edges(2, 2, [(0, 0), (0, 1), (1, 0)])


@pytest.fixture
def record_criterion():
    def record(label: str, passed: bool, detail: str) -> None:
        ACCEPTANCE_LINES.append(f"{label:<5} {'PASS' if passed else 'FAIL'}  {detail}")
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
