import pytest

ACCEPTANCE = []


@pytest.fixture
def record():
    """Record one PASS/FAIL line and assert on it."""
    def _record(num, name, ok, detail=""):
        line = f"criterion {num:2d} {'PASS' if ok else 'FAIL'}  {name}  {detail}"
        ACCEPTANCE.append((num, line))
        print(line)
        assert ok, line
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE):
        terminalreporter.write_line(line)
