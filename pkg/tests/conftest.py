import sys

import pytest
from hypothesis import settings

from kramers_exit import load_example

settings.register_profile("repro", derandomize=True, print_blob=True)
settings.load_profile("repro")


@pytest.fixture(scope="session")
def disc_plus():
    return load_example("disc_plus")


@pytest.fixture(scope="session")
def disc_minus():
    return load_example("disc_minus")


@pytest.fixture(scope="session")
def disc_gibbs():
    return load_example("disc_gibbs")


@pytest.fixture(scope="session")
def interval():
    return load_example("interval")


@pytest.fixture(scope="session")
def ellipse():
    return load_example("ellipse")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
