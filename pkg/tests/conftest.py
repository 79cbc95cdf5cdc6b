import pytest

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line; it is echoed now and again in the session summary."""
    def _report(line: str) -> None:
        _ACCEPTANCE_LINES.append(line)
        print(line, flush=True)
    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
