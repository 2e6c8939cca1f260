import numpy as np
import pytest

ACCEPTANCE_LINES = []


def random_instance(rng, b, m, l, n):
    """Nonnegative library, signed variability library, noisy mixture."""
    M = rng.random((b, m))
    V = rng.standard_normal((b, l)) * 0.1
    A = rng.random((m, n)) * (rng.random((m, n)) < 0.5)
    R = M @ A + 0.01 * rng.standard_normal((b, n))
    return R, M, V


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
