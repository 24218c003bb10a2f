import numpy as np
import pytest

_ACCEPTANCE: dict = {}


def record_criterion(number: int, title: str, passed: bool, detail: str = "") -> None:
    _ACCEPTANCE[number] = (title, "PASS" if passed else "FAIL", detail)


def skip_criterion(number: int, title: str, reason: str) -> None:
    _ACCEPTANCE[number] = (title, "SKIP", reason)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, status, detail = _ACCEPTANCE[number]
        line = f"[{status}] criterion {number:2d}: {title}"
        if detail:
            line += f" -- {detail}"
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
