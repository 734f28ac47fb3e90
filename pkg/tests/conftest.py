import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from jkoflow import Grid1D, make_field, make_mobility

settings.register_profile(
    "default", deadline=None, max_examples=40, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=300)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def bump(grid, center, width, floor=0.0):
    x = grid.centers
    return make_field(grid, np.maximum(1 - ((x - center) / width) ** 2, 0.0) + floor)


@pytest.fixture
def grid32():
    return Grid1D(1.0, 32)


@pytest.fixture
def logistic():
    return make_mobility("logistic", S0=1.0, growth=1.0)


ACCEPTANCE_LINES = {}


def record_criterion(number: int, ok: bool, detail: str):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
