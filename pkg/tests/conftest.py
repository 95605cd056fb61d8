import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

_criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if rep.when == "call" or rep.outcome != "passed":
        detail = dict(rep.user_properties).get("detail", "")
        if rep.outcome != "passed" and not detail:
            detail = str(rep.longrepr).strip().splitlines()[-1][:200] if rep.longrepr else ""
        _criteria[number] = (title, rep.outcome, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_criteria):
        title, outcome, detail = _criteria[number]
        status = "PASS" if outcome == "passed" else "FAIL"
        line = f"[{status}] criterion {number:>2}: {title}"
        terminalreporter.write_line(line + (f" -- {detail}" if detail else ""))
