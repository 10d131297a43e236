import os

import numpy as np
import pytest

from hfhbloch import BlochProblem, Inclusion, MediumSpec, PhysicsMode, PlaneWaveBasis, homogeneous

ACCEPTANCE_LINES = []

EXPENSIVE = os.environ.get("HFHBLOCH_EXPENSIVE") == "1"


def pytest_collection_modifyitems(config, items):
    if EXPENSIVE:
        return
    skip = pytest.mark.skip(reason="set HFHBLOCH_EXPENSIVE=1 to run the expensive tier")
    for item in items:
        if "expensive" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def record():
    """Log one pass/fail line per acceptance check and assert it."""
    def _record(tag, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {tag}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return _record


PCF = MediumSpec(6.0, (Inclusion("disk", 0.75, 1.0),), 2)
X2 = np.array([np.pi / 2, 0.0])
M2 = np.array([np.pi / 2, np.pi / 2])


@pytest.fixture(scope="session")
def pcf_medium():
    return PCF


@pytest.fixture(scope="session")
def pcf_problem():
    return BlochProblem(PCF, PhysicsMode.quasi2d(3.0), PlaneWaveBasis(2, 12), "inverse")


@pytest.fixture(scope="session")
def pcf_small():
    return BlochProblem(PCF, PhysicsMode.quasi2d(3.0), PlaneWaveBasis(2, 6), "inverse")


@pytest.fixture(scope="session")
def empty_h3():
    return BlochProblem(homogeneous(1.0), PhysicsMode.scalar_h3(), PlaneWaveBasis(2, 4))
