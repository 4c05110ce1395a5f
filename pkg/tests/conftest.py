import pytest

_LINES: list[str] = []


@pytest.fixture
def acceptance_log():
    """Collects one status line per acceptance criterion for the terminal summary."""
    def log(line: str) -> None:
        print(line)
        _LINES.append(line)
    return log


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
