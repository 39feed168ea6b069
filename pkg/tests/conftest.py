import pytest
from hypothesis import settings

from wpcnrate.channel import FadingParams, SystemParams
from wpcnrate.schemes import ReliabilityTarget

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def baseline(M=1, psi=1.0, v=1000, n=200, m1=5.0, m2=2.0):
    return SystemParams(FadingParams(m1, m2, M), psi, v, n)


@pytest.fixture
def sp_m2():
    return baseline(M=2)


@pytest.fixture
def rt_1e4():
    return ReliabilityTarget(1e-4, 16)


# one line per acceptance criterion, collected by tests/test_acceptance.py and
# repeated at the end of the run so it survives output capturing
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
