import numpy as np
import pytest

from matchopt.ot_core import CostMatrix


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_cost(seed: int, n: int) -> CostMatrix:
    return CostMatrix(np.random.default_rng(seed).random((n, n)), c_bar=1.0)


# Acceptance criteria record one line each; they are echoed after the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
