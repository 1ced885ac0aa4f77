import numpy as np
import pytest

from stochhj.dsl import field


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def phase(src, n=1):
    return field(src, n)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
