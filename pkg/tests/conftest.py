import pytest

# (criterion number, title, passed, detail) appended by tests/test_acceptance.py
ACCEPTANCE = []


def record(number, title, passed, detail):
    ACCEPTANCE.append((number, title, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number:>2}. {title}: {detail}")


@pytest.fixture
def acceptance():
    return record
