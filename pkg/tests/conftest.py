import math

import pytest

from magsplit.model import GridSpec, ToleranceSpec, reference_config
from magsplit.radial import solve_ground_state

_STATES = {}


def ground_state(lam, **overrides):
    """Session-wide memo of radial solves on the reference well."""
    key = (lam, tuple(sorted(overrides.items())))
    if key not in _STATES:
        _STATES[key] = solve_ground_state(reference_config(lam=lam, **overrides))
    return _STATES[key]


@pytest.fixture(scope="session")
def gs10():
    return ground_state(10.0)


@pytest.fixture(scope="session")
def gs20():
    return ground_state(20.0)


@pytest.fixture(scope="session")
def gs40():
    return ground_state(40.0)


def fine_config(lam, divisor=16, eigen_rel=1e-12, **overrides):
    """Reference config at spacing magnetic_length / divisor."""
    return reference_config(
        lam=lam, grid=GridSpec(spacing=math.sqrt(2.0 / lam) / divisor),
        tolerances=ToleranceSpec(eigen_rel=eigen_rel), **overrides)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[str, str] = {}


def record(criterion: str, passed: bool, detail: str, expected_failure: bool = False):
    tag = "PASS" if passed else ("FAIL (expected, documented)" if expected_failure else "FAIL")
    ACCEPTANCE_LINES[criterion] = f"{tag}  {criterion}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES, key=lambda k: (int(k.split()[1].rstrip("ab")), k)):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
