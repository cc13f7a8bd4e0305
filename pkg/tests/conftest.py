import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("locmor", deadline=None, max_examples=25, derandomize=True)
settings.load_profile("locmor")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """Record the outcome of the acceptance criterion named by the test's ``number`` marker."""
    number = request.node.get_closest_marker("criterion").args[0]
    yield
    rep = getattr(request.node, "rep_call", None)
    ok = rep is not None and rep.passed
    prev = ACCEPTANCE.get(number, (True, ""))
    ACCEPTANCE[number] = (prev[0] and ok, request.node.get_closest_marker("criterion").args[1])


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, title = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}")
