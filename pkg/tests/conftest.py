import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    max_examples=int(os.environ.get("HYPOTHESIS_MAX_EXAMPLES", 60)),
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

_criteria = {}
_items = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by this test")
    config.addinivalue_line("markers", "slow: takes minutes (the training experiment)")


def pytest_runtest_logreport(report):
    item = _items.get(report.nodeid)
    if item is None:
        return
    if report.when == "call" or report.outcome != "passed":
        n, title = item
        prev = _criteria.get(n, (title, True))
        _criteria[n] = (title, prev[1] and report.outcome == "passed")



def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            _items[item.nodeid] = (m.args[0], m.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, ok = _criteria[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}")


@pytest.fixture
def rng():
    import numpy as np

    return np.random.default_rng(1234)
