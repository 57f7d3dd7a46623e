from __future__ import annotations

import pytest

_ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


class AcceptanceLog:
    def record(self, number: int, name: str, passed: bool, note: str = "") -> None:
        _ACCEPTANCE[number] = (name, passed, note)


@pytest.fixture
def acceptance() -> AcceptanceLog:
    return AcceptanceLog()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        name, passed, note = _ACCEPTANCE[number]
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {name}"
        terminalreporter.write_line(line + (f" ({note})" if note else ""))
