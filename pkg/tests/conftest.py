import sys

import numpy as np
import pytest

from jpm.rankings import RankingProblem


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_problem():
    # three overlapping partials over 5 items
    return RankingProblem.from_orders([(0, 1, 2, 3), (1, 0, 4), (2, 4, 3)])


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for key in sorted(lines):
            terminalreporter.write_line(lines[key])
