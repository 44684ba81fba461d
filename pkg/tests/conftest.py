import pytest

_ROWS: list[tuple[str, bool, str]] = []


@pytest.fixture(scope="session")
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(criterion: str, ok: bool, detail: str) -> bool:
        _ROWS.append((criterion, bool(ok), detail))
        print(f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ROWS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, ok, detail in _ROWS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}")
