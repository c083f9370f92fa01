"""Per-criterion pass/fail summary for the acceptance suite."""

import pytest

TITLES = {
    1: "golden transforms",
    2: "scaling condition",
    3: "oracle equivalence",
    4: "integer/fake-quant duality",
    5: "failure reproduction",
    6: "learned-scales recovery",
    7: "negative baseline",
    8: "tap-range equalization",
    9: "gradient check",
    10: "performance (informational)",
}

_outcomes = {}
_notes = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            item.user_properties.append(("criterion", mark.args[0]))


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    n = props.get("criterion")
    if n is None:
        return
    if report.when == "call" or report.failed or report.skipped:
        ok = report.passed if report.when == "call" else not (report.failed or report.skipped)
        _outcomes.setdefault(n, []).append(ok)
    for key, value in report.user_properties:
        if key == "note" and report.when == "call":
            _notes.setdefault(n, []).append(value)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(TITLES):
        results = _outcomes.get(n)
        status = "NOT RUN" if results is None else ("PASS" if all(results) else "FAIL")
        notes = "; ".join(_notes.get(n, []))
        tr.write_line(f"criterion {n:2d} {status:7s} {TITLES[n]}" + (f"  [{notes}]" if notes else ""))


@pytest.fixture
def note(record_property):
    """Attach a short measured value to the criterion summary line."""
    return lambda text: record_property("note", text)
