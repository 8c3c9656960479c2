"""Collects the acceptance verdicts and prints one line per criterion."""

import pytest

_VERDICTS: dict[int, tuple[bool, str, str]] = {}


@pytest.fixture
def verdict():
    """``verdict(n, title, ok, detail)`` records criterion n and fails the test when not ok."""

    def record(n, title, ok, detail):
        _VERDICTS[n] = (bool(ok), title, detail)
        assert ok, f"criterion {n} ({title}) failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        ok, title, detail = _VERDICTS[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}: {detail}")
