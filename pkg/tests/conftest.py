from collections import defaultdict

import pytest

_criteria: dict[int, dict] = defaultdict(lambda: {"title": "", "outcomes": [], "details": []})


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        number, title = marker.args
        entry = _criteria[number]
        entry["title"] = title
        entry["outcomes"].append(report.outcome)
        entry["details"].extend(v for k, v in item.user_properties if k == "detail")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        ok = all(o == "passed" for o in entry["outcomes"])
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {entry['title']}"
        if entry["details"]:
            line += " (" + "; ".join(entry["details"]) + ")"
        terminalreporter.write_line(line)
