import os
import tempfile

# Settings are read once per process, so point them at scratch space before
# any package module is imported.
_SCRATCH = tempfile.mkdtemp(prefix="penalty_flow_tests_")
os.environ.setdefault("PENALTY_FLOW_LOG_DIR", os.path.join(_SCRATCH, "logs"))
os.environ.setdefault("PENALTY_FLOW_OUTPUT_DIR", os.path.join(_SCRATCH, "output"))
os.environ.setdefault("PENALTY_FLOW_DB_URL", f"sqlite:///{os.path.join(_SCRATCH, 'runs.db')}")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from dynamics import IntegratorOptions, integrate  # noqa: E402
from problems import builtin  # noqa: E402
from schedules import Schedule  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def canonical():
    return Schedule.canonical()


@pytest.fixture(scope="session")
def p0():
    return builtin("P0_zero")


@pytest.fixture(scope="session")
def p1():
    return builtin("P1_strongly_monotone")


@pytest.fixture(scope="session")
def p2():
    return builtin("P2_monotone_line")


@pytest.fixture(scope="session")
def p3():
    return builtin("P3_l1_box")


@pytest.fixture(scope="session")
def p1_short(p1):
    """P1 from the origin to t = 200 with the canonical schedule."""
    opts = IntegratorOptions(method="rk4", record_every=10, reference=p1.certificate)
    return integrate(p1.instance, Schedule.canonical(), np.zeros(4), 200.0, opts)
