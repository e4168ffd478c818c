import numpy as np
import pytest

from panelnowcast.simulate import synthetic_mixed_panel


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_panel():
    return synthetic_mixed_panel(N=4, T=30, K=2, seed=1)


def random_problem(rng, n=40, p=12, n_groups=4):
    X = rng.standard_normal((n, p))
    X[:, 1] *= 5.0
    beta = np.zeros(p)
    beta[:3] = rng.standard_normal(3)
    y = 0.3 + X @ beta + 0.5 * rng.standard_normal(n)
    labels = np.sort(rng.integers(0, n_groups, p))
    return X, y, labels


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
