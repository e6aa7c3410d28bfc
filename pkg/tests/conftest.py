"""Per-criterion pass/fail summary for the acceptance suite."""

import pytest

_CRITERIA = {}  # number -> (title, [outcomes])
_ITEM_CRIT = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(num, title): acceptance criterion covered by the test")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            num, title = m.args
            _CRITERIA.setdefault(num, (title, []))
            _ITEM_CRIT[item.nodeid] = num


def pytest_runtest_logreport(report):
    num = _ITEM_CRIT.get(report.nodeid)
    if num is None:
        return
    if report.when == "call" or report.outcome != "passed":
        _CRITERIA[num][1].append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        title, outcomes = _CRITERIA[num]
        if not outcomes:
            status = "NOT RUN"
        elif all(o == "passed" for o in outcomes):
            status = "PASS"
        elif "failed" in outcomes:
            status = "FAIL"
        else:
            status = "SKIP"
        terminalreporter.write_line(f"criterion {num:2d}: {status:7s} {title}")
