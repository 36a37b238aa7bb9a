"""Collects the outcome of every ``acceptance`` test and prints one PASS/FAIL line per criterion."""

from __future__ import annotations

_OUTCOMES: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion checked by this test")


def pytest_runtest_logreport(report):
    marker = dict(report.user_properties).get("acceptance")
    if marker is None:
        return
    number, title = marker
    entry = _OUTCOMES.setdefault(number, {"title": title, "passed": True, "ran": False, "detail": ""})
    if report.when == "call":
        entry["ran"] = True
        entry["detail"] = dict(report.user_properties).get("detail", "")
    if report.failed:
        entry["passed"] = False


def pytest_runtest_setup(item):
    marker = item.get_closest_marker("acceptance")
    if marker is not None:
        item.user_properties.append(("acceptance", tuple(marker.args)))


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_OUTCOMES):
        e = _OUTCOMES[number]
        verdict = "PASS" if e["passed"] and e["ran"] else "FAIL"
        line = f"criterion {number:2d} {verdict}: {e['title']}"
        if e["detail"]:
            line += f" | {e['detail']}"
        terminalreporter.write_line(line)
