import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from epical.models import ModelSpec
from epical.objective import CalibrationProblem
from epical.simulate import add_noise, find_peak, integrate

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=15,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

TRUTH = {"sir": (0.3, 0.1), "sird": (0.3, 0.1, 0.02), "sirvd": (0.3, 0.1, 0.02, 0.05),
         "sir-subgroups": (0.3, 0.1)}


def make_problem(kind="sir", regime="low", sigma=0.0, seed=0, truth=None, **kw):
    """Self-generated calibration problem with known generating parameters."""
    spec = ModelSpec.default(kind)
    truth = TRUTH[kind] if truth is None else truth
    traj = integrate(spec, truth)
    split = find_peak(traj, "I")
    cutoff = split.low_cutoff if regime == "low" else split.high_cutoff
    data = add_noise(traj, sigma, seed).with_cutoff(cutoff)
    return CalibrationProblem(spec, data, **kw)


@pytest.fixture(scope="session")
def sir_problem():
    return make_problem("sir")


@pytest.fixture(scope="session")
def sird_problem():
    return make_problem("sird")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one "PASS/FAIL criterion N: ..." line per acceptance check, echoed at session end
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
