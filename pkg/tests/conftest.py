import re

import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance verdict; returns ``passed`` so tests can assert on it."""

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(re.search(r"criterion (\d+)", s).group(1))):
        terminalreporter.write_line(line)
