import os

import pytest


@pytest.fixture(scope="session")
def ref_cache(tmp_path_factory):
    """Reference cache shared by the whole session (or LOWRANK_REF_CACHE)."""
    path = os.environ.get("LOWRANK_REF_CACHE")
    return path if path else str(tmp_path_factory.mktemp("refcache"))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
