import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

import _shared  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if _shared.ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_shared.ACCEPTANCE_LINES.items()):
            terminalreporter.write_line(line)
