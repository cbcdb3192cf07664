import pytest

# one line per acceptance check, echoed in the terminal summary
REPORT = []


def report(criterion, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    REPORT.append(line)
    print(line)
    return ok


@pytest.fixture
def acceptance_report():
    return report


def pytest_terminal_summary(terminalreporter):
    if REPORT:
        terminalreporter.section("acceptance criteria")
        for line in REPORT:
            terminalreporter.write_line(line)
