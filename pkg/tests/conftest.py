from __future__ import annotations

import pytest

_CRITERIA: dict[int, str] = {}


@pytest.fixture
def record_criterion():
    """Store one acceptance line per criterion; printed in the terminal summary."""

    def record(number: int, ok: bool, detail: str, seconds: float):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  ({seconds:.1f}s)  {detail}"
        _CRITERIA[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[n])
