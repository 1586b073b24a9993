import os
import sys

sys.path.insert(0, os.path.dirname(__file__))


def pytest_terminal_summary(terminalreporter):
    import _acceptance

    if not _acceptance.LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_acceptance.LINES):
        terminalreporter.write_line(line)
