import pytest

from trucklane.cli import main

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def suite_runs(tmp_path_factory):
    """Two full ``suite`` invocations, serial and with two workers."""
    root = tmp_path_factory.mktemp("suite")
    first, second = root / "first", root / "second"
    codes = (main(["suite", "--out", str(first)]), main(["suite", "--out", str(second), "--jobs", "2"]))
    return first, second, codes


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
