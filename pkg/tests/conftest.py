"""Collects one pass/fail line per acceptance criterion and prints them after the run."""

import pytest

_criteria = {}


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("acceptance")
    if mark is None or call.when not in ("setup", "call"):
        return
    number, title = mark.args
    entry = _criteria.setdefault(number, {"title": title, "ok": True, "ran": False, "notes": []})
    if call.excinfo is not None:
        entry["ok"] = False
    if call.when == "call":
        entry["ran"] = True
        entry["notes"] += [v for k, v in item.user_properties if k == "measured"]


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        c = _criteria[number]
        status = "PASS" if c["ok"] and c["ran"] else "FAIL"
        notes = "; ".join(c["notes"])
        terminalreporter.write_line(f"[{status}] {number:2d}. {c['title']}" + (f"  ({notes})" if notes else ""))


@pytest.fixture
def measured(record_property):
    """Attach a human-readable measurement to the criterion summary line."""

    def note(text: str) -> None:
        record_property("measured", text)

    return note
