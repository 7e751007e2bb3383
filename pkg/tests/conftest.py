import zlib

import numpy as np
import pytest

from obspart.bounds import CollectiveJacobian
from obspart.config import parse_config
from obspart.gaussian import GaussianBelief, make_index
from obspart.runner import build_scenario, candidate_paths

ACCEPTANCE_LINES = []


def random_spd(rng, n, cond=50.0):
    """Random symmetric positive definite matrix with a controlled spread of eigenvalues."""
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    eig = np.exp(rng.uniform(0.0, np.log(cond), n))
    M = (Q * eig) @ Q.T
    return 0.5 * (M + M.T)


def random_belief(rng, n_poses, n_landmarks, cond=50.0):
    """Belief with a pose/landmark layout, random mean and dense random information."""
    index = make_index([(("x", k), "pose") for k in range(n_poses)]
                       + [(("l", j), "landmark") for j in range(n_landmarks)])
    n = 3 * n_poses + 2 * n_landmarks
    mean = rng.uniform(-10, 10, n)
    return GaussianBelief(random_spd(rng, n, cond), mean, index)


def random_gaussian_instance(rng, n, r, rows_per_component=1):
    """Prior information over ``n`` columns and ``r`` sparse measurement rows."""
    info = random_spd(rng, n)
    A = np.zeros((r, n))
    for i in range(r):
        k = rng.integers(1, min(n, 6) + 1)
        cols = rng.choice(n, size=k, replace=False)
        A[i, cols] = rng.standard_normal(k)
    groups = np.arange(r) // rows_per_component
    return info, CollectiveJacobian(A, groups)


@pytest.fixture
def rng(request):
    return np.random.default_rng(zlib.crc32(request.node.name.encode()))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


SMALL_CONFIG = """
seed: 3
world:
  bounds: [0, 0, 40, 40]
  landmarks: 30
sensor:
  max_range: 10.0
prior:
  trajectory: loop
  poses: 16
planning:
  goal: [34, 34]
  paths: 12
  samples: 150
  depth: 2
  exact: true
  refine_budget: 2
"""


@pytest.fixture(scope="session")
def small_config():
    return parse_config(SMALL_CONFIG, "small")


@pytest.fixture(scope="session")
def small_scenario(small_config):
    scen = build_scenario(small_config)
    return scen, candidate_paths(small_config, scen)
