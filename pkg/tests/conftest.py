import sys


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    seen = getattr(mod, "_SEEN", None)
    if not seen:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(seen):
        terminalreporter.write_line(seen[n])
