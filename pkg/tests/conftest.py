import typing as T

import numpy as np
import pytest

from hymem.data import gen_gaussian_stream
from hymem.model.network.mlp import init_mlp


def pytest_addoption(parser):
    parser.addoption(
        '--runslow', action='store_true', default=False,
        help='run slow trend-reproduction tests')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


def central_difference(
        fn: T.Callable[[np.ndarray], float],
        x: np.ndarray, idx: T.Tuple[int, ...], h: float = 1e-5) -> float:
    xp, xm = x.copy(), x.copy()
    xp[idx] += h
    xm[idx] -= h
    return (fn(xp) - fn(xm)) / (2 * h)


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-5)


@pytest.fixture
def fd():
    return central_difference


@pytest.fixture
def relerr():
    return rel_err


@pytest.fixture
def small_stream():
    return gen_gaussian_stream(
        classes=4, per_class_n=20, dim=4, seed=0, phases=2)


@pytest.fixture
def tanh_model():
    return init_mlp(4, 4, hidden=(6,), activation='tanh', seed=1)
