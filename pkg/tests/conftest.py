import numpy as np
import pytest

from diffpareto.config import ExperimentConfig
from diffpareto.costs import QuadraticCost


@pytest.fixture(scope="session")
def finance():
    """The default collaborative-investment experiment (10 agents, 5 assets)."""
    return ExperimentConfig({}).build()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def quadratic_network(n, m, rng, lam=(0.5, 2.0), noise_std=0.0, common=False):
    """Quadratic costs with Hessian spectra inside ``lam`` and random minimizers."""
    costs = []
    shared = rng.standard_normal(m)
    for _ in range(n):
        q, _ = np.linalg.qr(rng.standard_normal((m, m)))
        eig = rng.uniform(*lam, size=m)
        eig[0], eig[-1] = lam
        hess = (q * eig) @ q.T
        target = shared if common else rng.standard_normal(m)
        costs.append(QuadraticCost(hess, hess @ target, noise_std=noise_std))
    return costs


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def verdict(request, capsys):
    """Record and print one acceptance line; fails the test when ``ok`` is false."""
    log = request.config.stash.setdefault(ACCEPTANCE, [])

    def report(label, ok, detail):
        line = f"criterion {label}: {'PASS' if ok else 'FAIL'} {detail}"
        log.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":").split("-")[0])):
            terminalreporter.write_line(line)
