import pytest

_LINES = {}


@pytest.fixture
def criterion():
    """Records one PASS/FAIL line per acceptance criterion for the terminal summary."""
    def record(number, ok, detail):
        _LINES[number] = f"CRITERION {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(_LINES[number])
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(_LINES):
            terminalreporter.write_line(_LINES[key])
