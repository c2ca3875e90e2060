import numpy as np
import pytest

from hierevidence.probcore import make_rng


@pytest.fixture
def rng():
    return make_rng(20240611)


def quad_1d(logf, lo=-np.inf, hi=np.inf):
    from scipy.integrate import quad

    return quad(lambda t: np.exp(logf(t)), lo, hi, epsabs=0, epsrel=1e-10, limit=400)[0]


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
