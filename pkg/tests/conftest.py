"""Shared pytest setup: keeps this directory importable for `oracles`,
and collects the acceptance criterion verdict lines so they appear in
the terminal summary of every run."""

import sys
from pathlib import Path

import pytest

TESTS_DIR = Path(__file__).resolve().parent
if str(TESTS_DIR) not in sys.path:
    sys.path.insert(0, str(TESTS_DIR))

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_record():
    """Callable the acceptance tests use to log their pass/fail line."""
    return _ACCEPTANCE_LINES.append


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
