"""Collects the one-line verdicts printed by the acceptance suite."""

VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(VERDICTS):
        terminalreporter.write_line(line)
