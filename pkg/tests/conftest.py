import numpy as np
import pytest

from offgrid.numerics import rng_stream
from offgrid.scenario import base_covariance, draw_batch, scenario_preset
from offgrid.whitening import Whitener


@pytest.fixture(scope="session")
def scen_a():
    return scenario_preset("a")


@pytest.fixture(scope="session")
def true_whitener(scen_a):
    return Whitener.from_covariance(base_covariance(scen_a), "true-covariance")


@pytest.fixture(scope="session")
def scm_whitener(scen_a):
    pool = draw_batch(scen_a, 4000, rng_stream(7, "pool"))
    return Whitener.fit(pool.z, "scm")


def random_hpd(rng, m, cond=50.0):
    """Random Hermitian positive definite matrix with condition number ``cond``."""
    Q, _ = np.linalg.qr(rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m)))
    lam = np.geomspace(1.0, cond, m)
    S = (Q * lam) @ Q.conj().T
    return 0.5 * (S + S.conj().T)


ACCEPTANCE_LINES = []


def record_acceptance(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
