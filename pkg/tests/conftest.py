import pytest

CRITERIA = []


@pytest.fixture
def criterion():
    """Record and print one PASS/FAIL line, then assert it."""

    def report(label, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] {label}" + (f": {detail}" if detail else "")
        CRITERIA.append(line)
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)
