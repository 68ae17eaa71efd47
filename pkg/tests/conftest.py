import pytest

# acceptance tests append (criterion, passed, message) here; printed at the end
ACCEPTANCE = []


@pytest.fixture
def report():
    def add(criterion, passed, message):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {message}"
        print(line)
        ACCEPTANCE.append(line)
        return passed
    return add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
