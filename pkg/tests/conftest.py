import os
from pathlib import Path

from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# Trained forecasters are cached under the repository's out/ directory.
os.environ.setdefault("GREENMESH_OUT", str(Path(__file__).resolve().parents[1] / "out"))

import pytest

_ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def acceptance():
    """Record ``(criterion, passed, detail)``; printed at the end of the run."""
    def record(criterion: str, passed: bool, detail: str) -> None:
        _ACCEPTANCE[criterion] = (passed, detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda k: (int(k.split()[0]), k)):
        passed, detail = _ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if passed else 'FAIL'}  {detail}")
