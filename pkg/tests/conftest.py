import pytest

_ACCEPT_LINES = []


@pytest.fixture
def accept():
    """Print and record one ``[ACCEPT n] PASS/FAIL`` line, then fail on FAIL."""

    def report(number, title, checks):
        ok = all(passed for _, passed in checks)
        detail = "; ".join(f"{text} [{'ok' if passed else 'FAIL'}]" for text, passed in checks)
        line = f"[ACCEPT {number}] {'PASS' if ok else 'FAIL'} {title}: {detail}"
        print(line)
        _ACCEPT_LINES.append(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPT_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPT_LINES, key=lambda s: int(s.split()[1].rstrip("]"))):
            terminalreporter.write_line(line)
