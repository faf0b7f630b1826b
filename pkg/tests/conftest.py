import sys

import numpy as np
import pytest

from canet.data import SyntheticSpec, make_windows, synthesize_segments, synthetic_registry


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_segments():
    """Twelve short segments (200 frames -> 2 windows each), amplitude 3."""
    return synthesize_segments(SyntheticSpec(segments=12, frames_per_segment=200, seed=5))


@pytest.fixture(scope="session")
def small_windows(small_segments):
    return make_windows(small_segments)


@pytest.fixture(scope="session")
def skeleton_segments():
    return synthesize_segments(SyntheticSpec(segments=8, frames_per_segment=180, seed=2, skeleton=True))


@pytest.fixture(scope="session")
def registry7():
    return synthetic_registry()


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(acceptance, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
