import numpy as np
import pytest

from casvae.rng import Rng

_LINES: list[str] = []


@pytest.fixture
def rng():
    return Rng(12345)


@pytest.fixture
def criterion():
    """``record(number, passed, detail)`` adds one line to the acceptance summary."""
    def record(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'} | {detail}"
        _LINES.append(line)
        print(line)
    return record


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end training runs (minutes)")


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda l: int(l.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
