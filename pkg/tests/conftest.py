import numpy as np
import pytest

from smile.datagen import DatasetSpec, build_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_scene():
    """8 x 8 x 12 scene with three endmembers at 30 dB."""
    return build_dataset(DatasetSpec(height=8, width=8, channels=12, p=3, snr_db=30.0, seed=4))


# one line per acceptance criterion, printed after the run whatever the capture mode
ACCEPTANCE = {}


def record_criterion(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
