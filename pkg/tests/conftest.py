import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ergimp.models import builtin_instances, ts1  # noqa: E402
from ergimp.suite import solve_instance  # noqa: E402


@pytest.fixture(scope="session")
def instances():
    return builtin_instances()


@pytest.fixture(scope="session")
def solved(instances):
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = solve_instance(instances[name])
        return cache[name]

    return get


@pytest.fixture()
def ts1_inst():
    return ts1(0.2)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
