import math

import pytest
from hypothesis import settings

from rcubound.model import ActivityKind, truncate_activity

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

N_REF, K_REF = 19200, 128


@pytest.fixture(scope="session")
def poisson50_wide():
    # window used for the trade-off curves: [18, 92]
    return truncate_activity(ActivityKind.poisson(50), 1e-7)


@pytest.fixture(scope="session")
def ln_m_ref():
    return K_REF * math.log(2)


ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance_report(request):
    """Append one summary line per acceptance criterion; printed at the end of the run."""
    return request.config.stash[ACCEPTANCE_KEY].append


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
