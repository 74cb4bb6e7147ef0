import numpy as np
import pytest

import helpers


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if helpers.CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(helpers.CRITERIA, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
