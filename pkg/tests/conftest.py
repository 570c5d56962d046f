import pytest

_ACCEPTANCE = {}


@pytest.fixture
def record():
    """Record one acceptance criterion's verdict; the summary prints one line each."""
    def _record(criterion, passed, detail):
        _ACCEPTANCE[criterion] = (bool(passed), detail)
        line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'} | {detail}"
        print(line)
        return passed
    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda c: (int(c.rstrip("ab")), c)):
        passed, detail = _ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if passed else 'FAIL'} | {detail}")
