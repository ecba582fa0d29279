import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import _report  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if not _report.LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(_report.LINES):
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
