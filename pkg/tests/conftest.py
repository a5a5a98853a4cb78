import pytest

# criterion number -> (title, passed, detail), filled by test_acceptance
ACCEPTANCE: dict[str, tuple[str, bool, str]] = {}


@pytest.fixture
def record():
    def _record(key: str, title: str, passed: bool, detail: str) -> bool:
        ACCEPTANCE[key] = (title, bool(passed), detail)
        return bool(passed)
    return _record


def _order(key: str):
    digits = "".join(ch for ch in key if ch.isdigit())
    return int(digits or 0), key


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=_order):
        title, passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {key:>3}  {title}: {detail}")
