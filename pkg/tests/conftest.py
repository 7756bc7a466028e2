from __future__ import annotations

import pytest

from essograph import load_wam

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def wam():
    return load_wam()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
