import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False,
                     help='run the Monte-Carlo acceptance checks')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: long Monte-Carlo run, needs --runslow')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope='session')
def small_calibration():
    from calibration import build_calibration
    return build_calibration([7, 8, 10], trials=300, seed=11)
