import math

import numpy as np
import pytest

from gefbasins.basins import required_radius, tessellate
from gefbasins.critical import critical_search, find_zeros
from gefbasins.flow import IntegratorConfig
from gefbasins.gef import sample_gef

WINDOW = (0j, 4.0)
FAST = IntegratorConfig(rel_tol=1e-6, capture_radius=0.02)


@pytest.fixture(scope="session")
def sample():
    return sample_gef(3, required_radius(WINDOW))


@pytest.fixture(scope="session")
def zeros(sample):
    return find_zeros(sample, sample.valid_radius - 2)


@pytest.fixture(scope="session")
def crit(sample, zeros):
    return critical_search(sample, (WINDOW[1] + 1) * math.sqrt(2), zeros=zeros)


@pytest.fixture(scope="session")
def bmap(sample, zeros):
    return tessellate(sample, WINDOW, 0.05, FAST, zeros=zeros)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def report(cid, ok, text):
    """Record one acceptance line; ``ok=None`` marks a reported-only figure."""
    tag = "REPORT" if ok is None else ("PASS" if ok else "FAIL")
    line = f"[{tag}] criterion {cid}: {text}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
