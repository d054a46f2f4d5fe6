import numpy as np
import pytest

from zbsde import WienerIntegral, make_grid, simulate_brownian


@pytest.fixture(scope="session")
def grid100():
    return make_grid(1.0, 100)


@pytest.fixture(scope="session")
def paths_small():
    """20 steps, 20k paths: cheap ensemble for statistical checks."""
    return simulate_brownian(make_grid(1.0, 20), 20_000, seed=11)


@pytest.fixture(scope="session")
def paths_mid():
    return simulate_brownian(make_grid(1.0, 50), 100_000, seed=3)


@pytest.fixture(scope="session")
def paths_tiny():
    return simulate_brownian(make_grid(1.0, 10), 100, seed=5)


@pytest.fixture
def xi_a():
    """Payoff of the first worked example: int_0^1 -(1 - t) dB_t."""
    return WienerIntegral(lambda t: t - 1.0)


def assert_within(est, value, n_se=3.0, floor=0.0):
    assert abs(est.mean - value) <= max(n_se * est.stderr, floor), (est, value)


@pytest.fixture
def within():
    return assert_within


# one line per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
