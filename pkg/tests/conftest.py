import pytest

_LINES: list[str] = []


class Reporter:
    """Collects one PASS/FAIL line per acceptance criterion."""

    def __call__(self, number: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        _LINES.append(line)
        print(line)


@pytest.fixture
def report() -> Reporter:
    return Reporter()


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
