import sys
from pathlib import Path

import pytest

# shared oracles and helpers live next to the tests
sys.path.insert(0, str(Path(__file__).parent))

_criteria = {}
_details = {}


@pytest.fixture
def measured(request):
    """Record measured values for the acceptance summary line of this test's criterion."""
    mark = request.node.get_closest_marker("criterion")

    def record(text):
        _details.setdefault(mark.args[0], []).append(text)

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        outcome.get_result().criterion = tuple(mark.args)


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    n, text = marker
    ok = _criteria.get(n, (text, True))[1]
    if report.failed or (report.when == "call" and report.skipped):
        ok = False
    _criteria[n] = (text, ok)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        text, ok = _criteria[n]
        extra = "; ".join(_details.get(n, []))
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {text}"
        terminalreporter.write_line(line + (f"  [{extra}]" if extra else ""))
