import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_VERDICTS: dict[int, str] = {}


@pytest.fixture
def verdict():
    """Record one summary line per acceptance criterion: ``verdict(n, ok, detail)``."""

    def record(n: int, ok: bool, detail: str) -> bool:
        _VERDICTS[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(_VERDICTS[n])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[n])
