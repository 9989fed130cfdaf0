import math

import numpy as np
import pytest
from hypothesis import settings

from pmcycle.coordinator import run_bilevel
from pmcycle.model import Scenario, TargetSpec

settings.register_profile("repo", deadline=None, derandomize=True, print_blob=True)
settings.load_profile("repo")

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def ref_target():
    return TargetSpec(1, (0.0, 0.0), 1.0, 20.0, 3.0)


def equilateral(side=20.0, R0=(0.0, 0.0, 0.0)) -> Scenario:
    h = side * math.sqrt(3) / 2
    targets = (
        TargetSpec(1, (0.0, 0.0), 1.0, 20.0, 3.0),
        TargetSpec(2, (side, 0.0), 1.0, 20.0, 3.0),
        TargetSpec(3, (side / 2, h), 1.0, 20.0, 3.0),
    )
    return Scenario(targets, (1, 2, 3), R0)


def two_targets(distance=12.0) -> Scenario:
    targets = (TargetSpec(1, (0.0, 0.0), 1.0, 20.0, 3.0), TargetSpec(2, (distance, 0.0), 1.0, 20.0, 3.0))
    return Scenario(targets, (1, 2), (0.0, 0.0))


@pytest.fixture(scope="session")
def equilateral_scenario():
    return equilateral()


@pytest.fixture(scope="session")
def bilevel_equilateral(equilateral_scenario):
    """Default bilevel run on the equilateral scenario (shared, about a second)."""
    return run_bilevel(equilateral_scenario)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
