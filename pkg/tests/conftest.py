import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import acceptance_record  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if acceptance_record.LINES:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_record.LINES:
            terminalreporter.write_line(line)
