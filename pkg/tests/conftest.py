import numpy as np
import pytest

from multissf.bcrw import BcrwScenario, simulate_trajectory
from multissf.controls import UniformScheme, build_choice_sets, movement_formula
from multissf.core import HmmParams, Point
from multissf.distance import GammaParams
from multissf.rng import child_rng


@pytest.fixture(scope="session")
def small_scenario():
    """Table-1 movement parameters on a small map for quick trajectories."""
    return BcrwScenario(
        hmm=HmmParams(transition=[[0.9, 0.1], [0.2, 0.8]], initial=[0.5, 0.5]),
        kappas=[[20.0, 15.0], [10.0, -2.0]],
        gammas=(GammaParams(5.0, 0.7), GammaParams(1.0, 0.5)),
        targets=(Point(400.0, 400.0),),
        start_region=(0.0, 10.0, 0.0, 10.0),
        stop_radius=20.0,
    )


@pytest.fixture(scope="session")
def small_sim(small_scenario):
    return simulate_trajectory(child_rng(42, 1), small_scenario)


@pytest.fixture(scope="session")
def small_formula(small_scenario):
    return movement_formula(("goal",))


@pytest.fixture(scope="session")
def small_sets(small_sim, small_scenario, small_formula):
    """J=50 uniform choice sets on the small trajectory."""
    return build_choice_sets(7, small_sim.trajectory, UniformScheme(15.0), 50,
                             small_formula, targets={"goal": small_scenario.targets[0]})


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
