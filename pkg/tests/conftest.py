import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("pfopt", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("pfopt")


def random_pd(rng, k, cond=50.0):
    """Random symmetric positive-definite matrix with eigenvalues in [1, cond] / k."""
    Q, _ = np.linalg.qr(rng.standard_normal((k, k)))
    ev = np.exp(rng.uniform(0.0, np.log(cond), k)) / k
    S = (Q * ev) @ Q.T
    return (S + S.T) / 2


def random_returns(rng, t, k, rho=0.3, vol=0.04, drift=0.005):
    C = rho + (1 - rho) * np.eye(k)
    return drift + vol * rng.standard_normal((t, k)) @ np.linalg.cholesky(C).T


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
