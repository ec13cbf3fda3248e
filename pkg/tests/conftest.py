import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from censar import CensoredNetwork, build_weights
from censar.netlinalg import SarOperator

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_ACCEPTANCE_LINES = []


def record_acceptance(line):
    _ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def simulate_network(n, rho, beta, sigma2=1.0, observed_share=0.4, seed=0, intercept=False):
    """Small SAR network censored below the given observed share; returns (data, ws, z)."""
    rng = np.random.default_rng(seed)
    ws = build_weights(n)
    N = ws.N
    p = len(beta)
    X = rng.normal(1.0, 1.0, size=(N, p))
    if intercept:
        X[:, 0] = 1.0
    op = SarOperator(ws, rho)
    z = op.solve(X @ np.asarray(beta) + rng.normal(0.0, np.sqrt(sigma2), N))
    n_obs = max(int(round(observed_share * N)), 1)
    order = np.argsort(z)
    mask = np.zeros(N, dtype=bool)
    mask[order[N - n_obs:]] = True
    c = z[mask].min()
    return CensoredNetwork(ws.edge_index, np.where(mask, z, np.nan), mask, c, X), ws, z


@pytest.fixture
def small_network():
    return simulate_network(6, [0.1, 0.2, 0.3], [1.0, 0.5], observed_share=0.4, seed=11)
