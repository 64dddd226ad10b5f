import math

import numpy as np
import pytest
from scipy.integrate import dblquad

from multissf.bcrw import (BcrwScenario, bcrw_step_loglik,
                           example_two_state_scenario, simulate_state_chain,
                           simulate_trajectory, step_logliks, target_bearings)
from multissf.circular import consensus_vector, vonmises_logpdf
from multissf.core import HmmParams, Point
from multissf.distance import GammaParams, gamma_logpdf
from multissf.rng import child_rng


def test_example_scenario_matches_reference_parameters():
    sc = example_two_state_scenario()
    assert np.allclose(sc.hmm.transition, [[0.9, 0.1], [0.2, 0.8]])
    assert np.allclose(sc.kappas, [[20.0, 15.0], [10.0, -2.0]])
    assert sc.gammas[0] == GammaParams(5.0, 0.7)
    assert sc.gammas[1] == GammaParams(1.0, 0.5)
    assert sc.stop_radius == 30.0


def test_scenario_validation():
    hmm = HmmParams(transition=[[0.9, 0.1], [0.2, 0.8]], initial=[0.5, 0.5])
    with pytest.raises(ValueError):
        BcrwScenario(hmm=hmm, kappas=[[1.0, 1.0]],
                     gammas=(GammaParams(1, 1), GammaParams(1, 1)),
                     targets=(Point(5, 5),))
    with pytest.raises(ValueError):
        BcrwScenario(hmm=hmm, kappas=[[1.0, 1.0], [1.0, 1.0]],
                     gammas=(GammaParams(1, 1),), targets=(Point(5, 5),))
    with pytest.raises(ValueError):
        BcrwScenario(hmm=hmm, kappas=[[1.0, 1.0], [1.0, 1.0]],
                     gammas=(GammaParams(1, 1), GammaParams(1, 1)),
                     targets=(Point(5, 5),), stop_radius=0.0)


def test_target_bearings():
    b = target_bearings(Point(1.0, 1.0), (Point(1.0, 5.0), Point(-3.0, 1.0)))
    assert b == pytest.approx([math.pi / 2, math.pi])


def test_state_chain_transition_frequencies(rng):
    hmm = HmmParams(transition=[[0.9, 0.1], [0.2, 0.8]], initial=[0.5, 0.5])
    states = simulate_state_chain(rng, hmm, 40000)
    assert set(np.unique(states)) <= {0, 1}
    for h in range(2):
        rows = states[1:][states[:-1] == h]
        emp = np.mean(rows == 0)
        assert emp == pytest.approx(hmm.transition[h, 0], abs=0.02)


def test_simulate_trajectory_reaches_target(small_scenario, small_sim):
    traj = small_sim.trajectory
    assert not small_sim.truncated
    goal = small_scenario.targets[0]
    end = traj.points[-1]
    assert math.hypot(end.x - goal.x, end.y - goal.y) <= small_scenario.stop_radius
    # only the final point may be inside the stop radius
    before = traj.points[-2]
    assert math.hypot(before.x - goal.x, before.y - goal.y) > small_scenario.stop_radius
    assert len(small_sim.states) == traj.n_steps
    assert np.all(traj.distances > 0)


def test_simulate_trajectory_deterministic(small_scenario):
    a = simulate_trajectory(child_rng(3, 1), small_scenario)
    b = simulate_trajectory(child_rng(3, 1), small_scenario)
    assert a.trajectory.points == b.trajectory.points
    assert np.array_equal(a.states, b.states)


def test_simulate_trajectory_truncation_flag(small_scenario):
    capped = BcrwScenario(hmm=small_scenario.hmm, kappas=small_scenario.kappas,
                          gammas=small_scenario.gammas,
                          targets=small_scenario.targets,
                          start_region=small_scenario.start_region,
                          stop_radius=small_scenario.stop_radius, max_steps=5)
    sim = simulate_trajectory(child_rng(3, 1), capped)
    assert sim.truncated
    assert sim.trajectory.n_steps == 5


def test_step_loglik_composition():
    kap = np.array([10.0, -2.0])
    g = GammaParams(1.0, 0.5)
    prev, bearings = 0.3, np.array([1.1])
    cons = consensus_vector(prev, bearings, kap)
    got = bcrw_step_loglik((0.5, 1.7), prev, bearings, kap, g)
    expected = (gamma_logpdf(1.7, g)
                + vonmises_logpdf(0.5, cons.mean_direction, cons.concentration))
    assert got == pytest.approx(expected, rel=1e-14)


def test_step_density_normalizes():
    # the (direction, distance) density integrates to 1 over the cylinder
    kap = np.array([2.0, -1.0])
    g = GammaParams(1.0, 0.5)

    def dens(h, phi):
        return math.exp(bcrw_step_loglik((phi, h), 0.4, [1.0], kap, g))

    total, _ = dblquad(dens, -math.pi, math.pi, 0.0, np.inf)
    assert total == pytest.approx(1.0, abs=1e-7)


def test_step_logliks_alignment(small_sim, small_scenario):
    traj = small_sim.trajectory
    kap = small_scenario.kappas[0]
    g = small_scenario.gammas[0]
    out = step_logliks(traj, small_scenario.targets, kap, g)
    assert len(out) == traj.n_steps - 1
    t = 3
    expected = bcrw_step_loglik(
        (traj.angles[t], traj.distances[t]), traj.angles[t - 1],
        target_bearings(traj.points[t], small_scenario.targets), kap, g)
    assert out[t - 1] == pytest.approx(expected, rel=1e-14)
