import re
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# criterion id -> (passed, detail); filled by acceptance tests and by test outcomes
ACCEPTANCE: dict[str, list] = {}


def record(criterion: str, passed: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = [bool(passed), detail]


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_(a\d)_", report.nodeid)
    if not m or report.when != "call" and not report.failed:
        return
    key = m.group(1).upper()
    entry = ACCEPTANCE.setdefault(key, [True, ""])
    if report.failed:
        entry[0] = False
        if not entry[1]:
            entry[1] = "error: " + (report.longreprtext.strip().splitlines() or ["?"])[-1]


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[1:])):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key} {'PASS' if passed else 'FAIL'}: {detail}")
