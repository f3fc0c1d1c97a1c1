"""Shared pytest plumbing for the test suite.

The acceptance tests record one pass/fail line apiece; pytest's fd-level
capture would otherwise swallow the lines for passing tests, so they are
replayed in the terminal summary after capture ends.
"""

acceptance_lines: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if acceptance_lines:
        terminalreporter.section("acceptance report")
        for line in acceptance_lines:
            terminalreporter.write_line(line)
