import pytest

ACCEPTANCE: dict[tuple[int, str], tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record and print one PASS/FAIL line for an acceptance criterion, then assert it."""
    def report(number: int, title: str, ok: bool, detail: str = ""):
        ACCEPTANCE[number, title] = (bool(ok), detail)
        print(f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {title} ({detail})")
        assert ok, f"criterion {number} failed: {title} ({detail})"
    return report


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title), (ok, detail) in sorted(ACCEPTANCE.items()):
        terminalreporter.write_line(f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {title} ({detail})")
