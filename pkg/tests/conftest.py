import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from latentforge import LatentGrid, Rng, make_schedule  # noqa: E402


@pytest.fixture(scope="session")
def sched():
    return make_schedule()


@pytest.fixture
def rng():
    return Rng(1234)


def random_grid(shape=(4, 64, 64), seed=0, scale=1.0) -> LatentGrid:
    return LatentGrid(scale * Rng(seed).normal(shape))


@pytest.fixture
def grid():
    return random_grid()


def pytest_terminal_summary(terminalreporter):
    try:
        import test_acceptance
    except ImportError:
        return
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for block in test_acceptance.RESULTS:
            terminalreporter.write_line(block)
