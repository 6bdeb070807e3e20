import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from irrdrbsde.process import AdmissiblePair, LadlagProcess  # noqa: E402
from irrdrbsde.tree import TimeGrid, build_tree  # noqa: E402

ACCEPTANCE_LINES = []


def record_criterion(line: str):
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def gap():
    """One step; xi jumps up right after 0, zeta sits at 2 before T."""
    tree = build_tree(TimeGrid([0.0, 1.0]))
    xi = LadlagProcess([0.0, 0.0, 0.0], [1.0])
    zeta = LadlagProcess([2.0, 0.0, 0.0], [2.0])
    return tree, AdmissiblePair(xi, zeta)


@pytest.fixture
def crossing():
    """One step where xi's interval value exceeds zeta's instant value."""
    tree = build_tree(TimeGrid([0.0, 1.0]))
    xi = LadlagProcess([0.0, 0.0, 0.0], [5.0])
    zeta = LadlagProcess([1.0, 0.0, 0.0], [6.0])
    return tree, AdmissiblePair(xi, zeta)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
