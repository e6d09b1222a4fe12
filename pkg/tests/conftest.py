"""Shared pytest wiring.

test_acceptance registers one outcome line per criterion; the terminal
summary hook below prints them after the run so the pass/fail status of
every criterion is visible in one block.
"""

ACCEPTANCE_RESULTS = []


def record_acceptance(number, ok, detail):
    ACCEPTANCE_RESULTS.append((number, ok, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(ACCEPTANCE_RESULTS):
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {detail}")
