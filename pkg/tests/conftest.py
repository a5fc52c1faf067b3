import pytest

# (criterion number, passed, one-line detail), filled by test_acceptance.py
ACCEPTANCE = []


@pytest.fixture
def acceptance():
    def record(number, title, passed, detail):
        ACCEPTANCE.append((number, title, passed, detail))
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(
            f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}")
