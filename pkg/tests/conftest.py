import os
from pathlib import Path

import numpy as np
import pytest

DATA_DIR = Path(__file__).parent / "data"

# Extra UCR/UEA datasets (Chinatown, BME, ECG5000, ...) are looked up under
# this directory when set; the vendored GunPoint and BasicMotions are always
# available.
ARCHIVE_ENV = "MIXCL_UCR_ARCHIVE"

_ACCEPTANCE: list[tuple[str, str, str]] = []


def dataset_dir(name: str) -> Path | None:
    candidates = []
    if os.environ.get(ARCHIVE_ENV):
        candidates.append(Path(os.environ[ARCHIVE_ENV]) / name)
    candidates.append(DATA_DIR / name)
    for c in candidates:
        if c.is_dir():
            return c
    return None


@pytest.fixture
def gunpoint_dir() -> Path:
    return DATA_DIR / "GunPoint"


@pytest.fixture
def basicmotions_dir() -> Path:
    return DATA_DIR / "BasicMotions"


@pytest.fixture
def rs() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL/SKIP line per acceptance criterion."""

    def record(criterion: str, status: str, detail: str = "") -> None:
        _ACCEPTANCE.append((criterion, status, detail))

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, status, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{status:<4}  {criterion}  {detail}".rstrip())
