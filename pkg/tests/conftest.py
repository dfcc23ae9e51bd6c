import pytest

_HEADLINES: list[str] = []


@pytest.fixture(scope="session")
def headline():
    """Recorder for one-line PASS/FAIL verdicts, echoed in the summary."""
    def record(line: str) -> None:
        _HEADLINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _HEADLINES:
        terminalreporter.section("headline checks")
        for line in _HEADLINES:
            terminalreporter.write_line(line)
