import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# acceptance verdicts, filled by test_acceptance.py: number -> (ok, detail)
VERDICTS = {}


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(VERDICTS):
        ok, detail = VERDICTS[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
