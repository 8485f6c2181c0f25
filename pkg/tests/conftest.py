import math

import numpy as np
import pytest

from qdcascade.cascade import CascadeParams, expected_histograms


@pytest.fixture(scope="session")
def apd_params():
    return CascadeParams()


@pytest.fixture(scope="session")
def apd_expected(apd_params):
    return expected_histograms(apd_params)


@pytest.fixture(scope="session")
def ideal_params():
    """Delta IRF, no dark counts, no uncorrelated light."""
    return CascadeParams(irf_fwhm=0.0, dark_rate_x=0.0, dark_rate_xx=0.0, g2_xx=0.0)


def random_unitary(rng, n=2):
    z = (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))) / math.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_density(rng, rank=4):
    g = rng.normal(size=(4, rank)) + 1j * rng.normal(size=(4, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


ACCEPTANCE_LINES = []


def report(criterion, passed, detail):
    """Record one acceptance verdict; printed in the terminal summary."""
    line = f"{'PASS' if passed else 'FAIL'}  criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
