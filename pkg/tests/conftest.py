import numpy as np
import pytest

from phca import (
    AnalysisGrid,
    build_problem,
    demo,
    expand_grid,
    load_feeder,
    load_scenarios,
    scale_problem,
)
from phca.builder import BuilderConfig


@pytest.fixture(scope="session")
def demo_feeder():
    return load_feeder(demo.FEEDER_TEXT)


@pytest.fixture(scope="session")
def demo_config():
    return BuilderConfig(beta=0.2, vmin=0.97, vmax=1.03)


@pytest.fixture(scope="session")
def demo_problem(demo_feeder, demo_config):
    return build_problem(demo_feeder, demo_config)


@pytest.fixture(scope="session")
def demo_scenarios(demo_feeder):
    return load_scenarios(
        demo_feeder, demo.loads_csv(days=2), demo.solar_csv(days=2), seed=0
    )


@pytest.fixture(scope="session")
def small_theta_set(demo_problem, demo_scenarios):
    grid = AnalysisGrid(kappa=(1.0, 2.0), oversize=(1.0,), alpha=(0.24, 0.48))
    return expand_grid(demo_problem, demo_scenarios, grid)


@pytest.fixture(scope="session")
def scaled_demo_problem(demo_problem):
    prob, record = scale_problem(demo_problem.with_eta(1e-2))
    return prob


@pytest.fixture
def rng():
    return np.random.default_rng(0)
