import pytest

_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one acceptance outcome; the summary prints them all at the end."""

    def record(title, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {title}" + (f"  ({detail})" if detail else "")
        _VERDICTS.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
