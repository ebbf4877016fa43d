import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from roacert.dynamics import UncertainSystem  # noqa: E402
from roacert.error_model import ErrorBound  # noqa: E402
from roacert.geometry import Box  # noqa: E402
from roacert.relu_net import ReluNetwork  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]


def toy_system(a=0.5, delta=0.0, gamma=None, check=True, r=1.0, b=0.1):
    """Zero network, ``A = a I`` on ``[-r, r]^2`` with ``B = [-b, b]^2``."""
    if gamma is None:
        bound = ErrorBound(((0.0, delta),))
    else:
        bound = ErrorBound(((gamma, delta),))
    return UncertainSystem(a * np.eye(2), ReluNetwork.zeros([2, 2, 2]), bound, Box.cube(r, 2).as_polytope(),
                           Box.cube(b, 2), check=check)


@pytest.fixture
def contraction():
    return toy_system(0.5)


@pytest.fixture
def expansion():
    return toy_system(2.0, check=False)


@pytest.fixture(scope="session")
def shipped():
    from roacert.shipped import example_certificate, example_system

    return example_system("rational2d"), example_certificate("rational2d")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one summary line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def record(criterion: int, ok: bool, detail: str = "") -> None:
    ACCEPTANCE[criterion] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
