import numpy as np
import pytest

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def record_criterion():
    """Collect one pass/fail line per acceptance criterion for the summary."""

    def _record(name: str, ok: bool, detail: str) -> bool:
        ACCEPTANCE_RESULTS.append((name, bool(ok), detail))
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
