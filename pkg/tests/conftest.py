from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import FIXTURE_DIR, load_fixtures  # noqa: E402


@pytest.fixture(scope="session")
def fixtures() -> dict:
    return load_fixtures()


@pytest.fixture(scope="session")
def fixture_dir() -> Path:
    return FIXTURE_DIR


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines.values(), key=lambda s: int(s.split()[1])):
        terminalreporter.write_line(line)
