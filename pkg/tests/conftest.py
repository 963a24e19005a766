import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# acceptance criterion number -> {"text", "ok", "ran"}
_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): numbered acceptance criterion")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, text = mark.args
    entry = _criteria.setdefault(number, {"text": text, "ok": True, "ran": False})
    if call.excinfo is not None:
        if call.excinfo.errisinstance(pytest.skip.Exception):
            return
        entry["ok"] = False
    if call.when == "call":
        entry["ran"] = True


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        status = "FAIL" if not entry["ok"] else "PASS" if entry["ran"] else "SKIP"
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {entry['text']}")
