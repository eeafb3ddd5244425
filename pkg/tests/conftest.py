import pytest

_LINES = {}


@pytest.fixture
def report():
    """Record one PASS/FAIL line for an acceptance criterion."""

    def record(number, ok, detail, part=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {str(number) + part:>3}: {detail}"
        _LINES[(number, part)] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_LINES):
        terminalreporter.write_line(_LINES[key])
