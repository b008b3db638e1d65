import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from stochhinf import SystemModel  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

F16_A = [[-1.01887, 0.90506, -0.00215], [0.82225, -1.07741, -0.17555], [0.0, 0.0, -1.0]]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def scalar_det():
    one = np.ones((1, 1))
    return SystemModel.from_costs(-one, 0 * one, one, 0 * one, one, one, 2.0)


def scalar_stoch():
    one = np.ones((1, 1))
    return SystemModel.from_costs(-one, one, one, one, one, one, 2.0)


def synthetic3():
    A = np.array([[-1.0, 0.5, 0.0], [0.2, -1.5, 0.3], [0.0, 0.4, -2.0]])
    A1 = np.array([[0.2, 0.0, 0.1], [0.0, 0.3, 0.0], [0.1, 0.0, 0.2]])
    B = np.array([[0.0], [0.0], [1.0]])
    E = np.array([[1.0], [0.0], [0.0]])
    return SystemModel.from_costs(A, A1, B, E, np.eye(3), np.eye(1), 3.0)


def random_model(rng, n=3, m=1, p=1, gamma=3.0):
    from oracles import random_ms_stable

    A, A1 = random_ms_stable(rng, n, noise=0.2)
    B = rng.standard_normal((n, m))
    E = 0.5 * rng.standard_normal((n, p))
    return SystemModel.from_costs(A, A1, B, E, np.eye(n), np.eye(m), gamma)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
