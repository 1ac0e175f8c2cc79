import sys

import numpy as np
import pytest

from mlppde.model import ScaledHeat, SemilinearProblem, allen_cahn, constant, linear, parse_initial_value, zero


@pytest.fixture
def allen_cahn_1d():
    """Clamped Allen-Cahn in d = 1 with a Gaussian bump, T = 0.3."""
    return SemilinearProblem(
        1, 0.3, ScaledHeat(), allen_cahn((-2.0, 2.0), clamp=True), parse_initial_value("half_exp_neg_normsq")
    )


@pytest.fixture
def linear_ode_problem():
    return SemilinearProblem(1, 1.0, ScaledHeat(), linear(1.0), constant(1.0))


def constant_problem(d, c, T=1.0):
    return SemilinearProblem(d, T, ScaledHeat(), zero(), constant(c))


@pytest.fixture
def rng():
    return np.random.default_rng(20261019)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
