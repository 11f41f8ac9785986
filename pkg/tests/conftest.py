from __future__ import annotations

import os

import pytest
from hypothesis import settings

from ibrfault.ingest import load_network, reference_network_path

settings.register_profile("default", deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# filled by test_acceptance.py, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def ref_net():
    return load_network(reference_network_path("ieee123_td.json"))


@pytest.fixture(scope="session")
def small_net():
    return load_network(reference_network_path("feeder13_td.json"))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
