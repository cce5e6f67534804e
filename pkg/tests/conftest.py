import pytest

_verdicts = []


@pytest.fixture
def verdict():
    """Record one acceptance criterion; prints a PASS/FAIL line and fails the test on FAIL."""

    def record(number, title, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}  [{detail}]"
        _verdicts.append((number, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _verdicts:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_verdicts):
            terminalreporter.write_line(line)
