import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.geometry import make_ball_grid, make_sphere_grid  # noqa: E402
from src.kernel import CACHED, MATRIX_FREE, build_operator  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: experiment-scale checks (deselect with -m 'not slow')")


@pytest.fixture(scope="session")
def sphere3():
    return make_sphere_grid(3, 12)


@pytest.fixture(scope="session")
def ball3(sphere3):
    return make_ball_grid(sphere3, 12)


@pytest.fixture(scope="session")
def op3(sphere3, ball3):
    """行正規化した n=3 の演算子"""
    return build_operator(sphere3, ball3, mode=CACHED, row_normalized=True)


@pytest.fixture(scope="session")
def op3_raw(sphere3, ball3):
    return build_operator(sphere3, ball3, mode=MATRIX_FREE, row_normalized=False)


@pytest.fixture(scope="session")
def sphere2():
    return make_sphere_grid(2, 64)


@pytest.fixture(scope="session")
def op2(sphere2):
    return build_operator(sphere2, make_ball_grid(sphere2, 16), mode=CACHED)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture(scope="session")
def sphere16():
    return make_sphere_grid(3, 16)


@pytest.fixture(scope="session")
def op16(sphere16):
    """実験の既定設定 (解像度 16, 半径方向 16, grading 2) と同じ演算子"""
    return build_operator(sphere16, make_ball_grid(sphere16, 16, 2.0), mode=CACHED)
