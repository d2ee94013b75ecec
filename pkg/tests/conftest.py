import numpy as np
import pytest

from thermobeam import Forcing, ModelParams, make_basis


@pytest.fixture(scope="session")
def basis():
    return make_basis(32)


@pytest.fixture(scope="session")
def forced(basis):
    """beta = 5 with unit lateral load on mode 1."""
    return ModelParams(5.0, basis=basis, forcing=Forcing.constant(basis.mode(1), None, basis))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_field(rng, basis, decay=2.0):
    n = np.arange(1, basis.N + 1)
    return basis.field(rng.standard_normal(basis.N) / n ** decay)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
