import numpy as np
import pytest

from mixdiff import AnalyticScoreModel, NoiseSchedule, default_layout

from helpers import ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def sched():
    return NoiseSchedule()


@pytest.fixture
def layout():
    return default_layout()


@pytest.fixture
def by_label(layout):
    return {d.label: d for d in layout}


@pytest.fixture
def oracle(layout, sched):
    return AnalyticScoreModel(layout, sched)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
