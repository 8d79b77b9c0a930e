import pytest

_criteria: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    mark = _marks.get(report.nodeid)
    if mark is None:
        return
    num, title = mark
    ok = report.passed
    prev = _criteria.get(num)
    _criteria[num] = (title, ok if prev is None else (prev[1] and ok))


_marks: dict = {}


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            _marks[item.nodeid] = m.args


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_criteria):
        title, ok = _criteria[num]
        terminalreporter.write_line(f"CRITERION {num} {'PASS' if ok else 'FAIL'}: {title}")
