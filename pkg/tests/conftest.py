import sys

import numpy as np
import pytest

from dtnspeed.model_config import default_params, params_from_dict
from dtnspeed.pipeline import analyze
from dtnspeed.quadrature import build_grid
from dtnspeed.stage_analysis import StageModel


@pytest.fixture(scope="session")
def params():
    return default_params()


@pytest.fixture(scope="session")
def grid(params):
    return build_grid(params.region, 36, 21)


@pytest.fixture(scope="session")
def stage(params, grid):
    return StageModel(params, grid)


@pytest.fixture(scope="session")
def result(params):
    return analyze(params)


@pytest.fixture(scope="session")
def window_params():
    return params_from_dict({"theta_w": np.pi / 8})


@pytest.fixture(scope="session")
def window_result(window_params):
    return analyze(window_params)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.REPORT):
        terminalreporter.write_line(mod.REPORT[n])
