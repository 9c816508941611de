"""Collects one verdict line per acceptance criterion and prints them at the end."""

ACCEPTANCE_LINES: dict = {}


def record(criterion: str, passed: bool, detail: str) -> bool:
    ACCEPTANCE_LINES[criterion] = f"{'PASS' if passed else 'FAIL'}  {criterion}: {detail}"
    print(ACCEPTANCE_LINES[criterion])
    return passed


def skip_line(criterion: str, reason: str):
    ACCEPTANCE_LINES[criterion] = f"SKIP  {criterion}: {reason}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: [int(p) if p.isdigit() else p for p in k.replace("/", ".").split(".")]):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
