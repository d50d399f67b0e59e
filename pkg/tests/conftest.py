import numpy as np
import pytest

from transdiff.densities import MixtureDensity

FIT1 = np.array([0.071, 0.27, 25.41, 1.36, 29.02, 2.59])
FIT2 = np.array([0.0015, 0.55, 25.66, 0.54, 30.94, 1.22])
SYMMETRIC = np.array([1.0, 0.5, -1.0, 0.5, 1.0, 0.5])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def bimodal():
    return MixtureDensity.bimodal(0.3, -1.0, 0.6, 1.5, 0.9)


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
