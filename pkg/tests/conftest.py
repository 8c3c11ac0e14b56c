"""Shared pytest plumbing: collect acceptance verdict lines for the summary."""

import pytest

_criterion_lines = []


@pytest.fixture(scope="session")
def criterion_log():
    """Append one 'criterion N (...): PASS|FAIL' line per acceptance test."""
    return _criterion_lines


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _criterion_lines:
        terminalreporter.section("acceptance criteria")
        for line in _criterion_lines:
            terminalreporter.write_line(line)
