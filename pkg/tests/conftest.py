import sys

import pytest


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
    tables = getattr(module, "TABLES", [])
    for title, text in tables:
        terminalreporter.write_line("")
        terminalreporter.write_line(title)
        for line in text.rstrip("\n").splitlines():
            terminalreporter.write_line("  " + line)
