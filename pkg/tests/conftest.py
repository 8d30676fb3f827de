import pytest

_VERDICTS = {}


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(number, passed, detail=""):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number:>2}: {detail}"
        _VERDICTS[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        terminalreporter.write_line(_VERDICTS[number])
