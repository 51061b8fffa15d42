from __future__ import annotations

import pytest

_RESULTS: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion a test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n, title = marker.args
    entry = _RESULTS.setdefault(n, {"title": title, "passed": 0, "failed": [], "xfailed": []})
    if report.when == "call" or (report.when == "setup" and not report.passed):
        if hasattr(report, "wasxfail"):
            entry["xfailed"].append(item.name)
        elif report.passed:
            entry["passed"] += 1
        elif report.failed:
            entry["failed"].append(item.name)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_RESULTS):
        e = _RESULTS[n]
        ok = not e["failed"] and not e["xfailed"] and e["passed"] > 0
        status = "PASS" if ok else "FAIL"
        detail = f"{e['passed']} check{'' if e['passed'] == 1 else 's'} passed"
        if e["failed"]:
            detail += f"; failed: {', '.join(e['failed'])}"
        if e["xfailed"]:
            detail += f"; not attainable: {', '.join(e['xfailed'])}"
        tr.write_line(f"criterion {n:2d} {status}  {e['title']}  ({detail})")
