"""Shared pytest hooks: the acceptance suite reports one line per criterion."""

import pytest

_ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Call ``criterion(n, passed, detail)`` once per acceptance criterion."""

    def record(number, passed, detail):
        _ACCEPTANCE[number] = (bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
