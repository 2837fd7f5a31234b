"""Per-criterion pass/fail summary for the acceptance suite.

Tests tagged ``@pytest.mark.criterion("4a", "short title")`` are folded
into one line per criterion at the end of the run; a criterion passes only
if every test carrying its tag passed.  ``criterion_note`` lets a test
attach the measured numbers to its line.
"""

import pytest

_results: dict = {}
_notes: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(key, title): acceptance criterion this test checks")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        key, title = marker.args
        ok = rep.passed
        prev = _results.get(key)
        _results[key] = (title, ok if prev is None else prev[1] and ok)


@pytest.fixture
def criterion_note(request):
    marker = request.node.get_closest_marker("criterion")

    def note(text):
        _notes.setdefault(marker.args[0], []).append(text)
    return note


def _order(key):
    digits = "".join(c for c in key if c.isdigit())
    return int(digits or 0), key


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for key in sorted(_results, key=_order):
        title, ok = _results[key]
        note = "; ".join(_notes.get(key, []))
        tr.write_line(f"criterion {key:<3} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{note}]" if note else ""))
