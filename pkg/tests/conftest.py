import numpy as np
import pytest

from wick_chaos.densities import ExpMixture, RawChaos, Unit
from wick_chaos.hermite import ChaosExpansion, make_rng, random_expansion


@pytest.fixture
def rng():
    return make_rng(12345)


@pytest.fixture
def random_poly(rng):
    def make(dim, degree):
        return random_expansion(dim, degree, rng)
    return make


@pytest.fixture
def mix_pm1():
    return ExpMixture([0.5, 0.5], [[1.0], [-1.0]])


@pytest.fixture
def mix_2d():
    return ExpMixture([0.3, 0.7], [[1.0, 0.0], [0.0, -2.0]])


@pytest.fixture
def he2_squared():
    # (x^2 - 1)^2 / 2 = (He4 + 4 He2 + 2) / 2
    return RawChaos(ChaosExpansion(1, {(0,): 1.0, (2,): 2.0, (4,): 0.5}))


@pytest.fixture
def unit1():
    return Unit(1)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[n])
