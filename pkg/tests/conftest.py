import pytest

from castsim.config import preset_config
from castsim.scenario import run

SEEDS = (1, 2, 3, 4, 5)
MODES = ("ptm-only", "ptm-multilink", "ptp-only")

_verdicts: dict[int, tuple[bool, str]] = {}


def record_verdict(n: int, passed: bool, detail: str) -> None:
    _verdicts[n] = (passed, detail)
    print(f"criterion {n}: {'PASS' if passed else 'FAIL'} {detail}")


@pytest.fixture(scope="session")
def verdict():
    return record_verdict


@pytest.fixture(scope="session")
def default_sweep():
    """Reports for every delivery mode on every seed of the reference scenario (300 s each)."""
    return {(mode, seed): run(preset_config(mode, seed=seed)).report
            for seed in SEEDS for mode in MODES}


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_verdicts):
        passed, detail = _verdicts[n]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {n:2d}: {detail}")
