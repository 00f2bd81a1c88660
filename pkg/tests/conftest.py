import sys

import numpy as np
import pytest

from tsa.toral import ToralBasis, orthogonalize


def make_basis(rng, D, J, sigma=1.0, omega=None):
    W = orthogonalize(rng.standard_normal((D, 2 * J)))
    if omega is None:
        omega = np.ones(J, dtype=int)
    return ToralBasis(W, omega, sigma)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
