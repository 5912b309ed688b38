import re


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call":
                continue
            m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", rep.nodeid)
            if m:
                lines.append((int(m.group(1)), m.group(2), outcome.upper()))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for num, name, outcome in sorted(lines):
        mark = "PASS" if outcome == "PASSED" else "FAIL"
        terminalreporter.write_line(f"[{mark}] criterion {num}: {name.replace('_', ' ')}")
