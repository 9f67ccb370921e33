import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gravphase import build_column, preset  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def normalized():
    p, _ = preset("normalized")
    return p


@pytest.fixture
def unit_column():
    return build_column(0.0, 1.0, 64)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
