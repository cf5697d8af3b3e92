import numpy as np
import pytest

from m4fw.model import build_foundation
from m4fw.tasks import registry_by_id


@pytest.fixture(scope="session")
def registry():
    return registry_by_id()


@pytest.fixture(scope="session")
def desk():
    # shared read-only model; tests that attach adapters build their own
    return build_foundation("desk", 0)


@pytest.fixture(scope="session")
def paper():
    return build_foundation("paper")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
