import contextlib
import time

import pytest

_ACCEPTANCE: dict[int, str] = {}


@contextlib.contextmanager
def _record(number: int, title: str, detail: dict):
    t0 = time.perf_counter()
    status = "FAIL"
    try:
        yield detail
        status = "PASS"
    finally:
        extra = ", ".join(f"{k}={v}" for k, v in detail.items())
        line = f"[{status}] criterion {number:>2}: {title} ({time.perf_counter() - t0:.1f}s"
        _ACCEPTANCE[number] = line + (f"; {extra})" if extra else ")")


@pytest.fixture
def criterion():
    """Context manager recording a pass/fail line for one acceptance criterion."""

    def make(number: int, title: str):
        return _record(number, title, {})

    return make


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[number])
