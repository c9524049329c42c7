"""Shared test plumbing: the acceptance-criteria summary block.

Acceptance tests register one line each; the hook prints them after the
normal pytest output so the verdicts are visible without -s.
"""

CRITERIA: list[tuple[int, str, bool, str]] = []


def record_criterion(number: int, name: str, passed: bool, detail: str) -> None:
    CRITERIA.append((number, name, passed, detail))
    print(f"criterion {number:2d} [{'PASS' if passed else 'FAIL'}] {name}: {detail}")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not CRITERIA:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for number, name, passed, detail in sorted(CRITERIA):
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} [{verdict}] {name}: {detail}")
