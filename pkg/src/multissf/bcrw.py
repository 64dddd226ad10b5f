"""Multi-state biased correlated random walk: simulation and the direct
per-step, per-state log-likelihood.

The walk draws each direction from a von Mises whose mean and concentration
come from the consensus of the previous heading and the bearings to fixed
targets, and each step length from a state-specific gamma law. The direct
log-likelihood doubles as the emission model for the hidden-state fitter
and as the oracle for the discrete-choice equivalence checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .circular import consensus_vector, vonmises_logpdf, vonmises_sample, wrap_angle
from .core import HmmParams, Point, Trajectory, derive_steps
from .distance import GammaParams, gamma_logpdf, gamma_sample


@dataclass(frozen=True)
class BcrwScenario:
    """Full specification of a multi-state walk.

    ``kappas`` is a (K, p+1) array: column 0 weights persistence, columns
    1..p weight attraction to ``targets``. ``start_region`` is a uniform
    sampling box (xmin, xmax, ymin, ymax) for the initial location. The walk
    stops when within ``stop_radius`` of the first target, or at
    ``max_steps`` (flagged, not an error).
    """

    hmm: HmmParams
    kappas: np.ndarray
    gammas: tuple[GammaParams, ...]
    targets: tuple[Point, ...]
    start_region: tuple[float, float, float, float] = (0.0, 10.0, 0.0, 10.0)
    stop_radius: float = 30.0
    max_steps: int = 5000

    def __post_init__(self):
        kap = np.atleast_2d(np.asarray(self.kappas, dtype=float))
        object.__setattr__(self, "kappas", kap)
        object.__setattr__(self, "gammas", tuple(self.gammas))
        object.__setattr__(self, "targets", tuple(self.targets))
        K = self.hmm.n_states
        if kap.shape != (K, 1 + len(self.targets)):
            raise ValueError("kappas must be K x (1 + n_targets)")
        if len(self.gammas) != K:
            raise ValueError("need one gamma law per state")
        if self.stop_radius <= 0:
            raise ValueError("stop_radius must be positive")


def example_two_state_scenario() -> BcrwScenario:
    """A two-state reference scenario: strong persistence and target
    attraction with long steps in state 1, persistence with mild repulsion
    and short steps in state 2. The walk starts near the south-west corner
    of a 2000x2000 map with the target at the center, giving a few hundred
    steps per trajectory before the stop radius is reached."""
    return BcrwScenario(
        hmm=HmmParams(transition=[[0.9, 0.1], [0.2, 0.8]], initial=[0.5, 0.5]),
        kappas=[[20.0, 15.0], [10.0, -2.0]],
        gammas=(GammaParams(shape=5.0, scale=0.7), GammaParams(shape=1.0, scale=0.5)),
        targets=(Point(1000.0, 1000.0),),
        start_region=(0.0, 10.0, 0.0, 10.0),
    )


def simulate_state_chain(rng: np.random.Generator, hmm: HmmParams, T: int) -> np.ndarray:
    """States S_0..S_T: S_0 from the initial law, then Markov transitions."""
    K = hmm.n_states
    states = np.empty(T + 1, dtype=int)
    states[0] = rng.choice(K, p=hmm.initial)
    for t in range(1, T + 1):
        states[t] = rng.choice(K, p=hmm.transition[states[t - 1]])
    return states


def target_bearings(point: Point, targets) -> np.ndarray:
    return np.array([math.atan2(p.y - point.y, p.x - point.x) for p in targets])


@dataclass
class SimResult:
    trajectory: Trajectory
    states: np.ndarray  # hidden state per step, aligned with trajectory.angles
    truncated: bool = False


def simulate_trajectory(rng: np.random.Generator, scenario: BcrwScenario) -> SimResult:
    """Run the walk until it reaches the first target or hits the step cap.

    The first step's "previous heading" is drawn uniformly on the circle.
    A capped walk is returned with ``truncated=True`` rather than raised.
    """
    xmin, xmax, ymin, ymax = scenario.start_region
    pos = Point(rng.uniform(xmin, xmax), rng.uniform(ymin, ymax))
    prev_angle = wrap_angle(rng.uniform(-math.pi, math.pi))
    points = [pos]
    states = []
    state = int(rng.choice(scenario.hmm.n_states, p=scenario.hmm.initial))
    goal = scenario.targets[0] if scenario.targets else None
    truncated = False
    while True:
        if goal is not None and math.hypot(pos.x - goal.x, pos.y - goal.y) <= scenario.stop_radius:
            break
        if len(states) >= scenario.max_steps:
            truncated = True
            break
        state = int(rng.choice(scenario.hmm.n_states, p=scenario.hmm.transition[state]))
        cons = consensus_vector(prev_angle, target_bearings(pos, scenario.targets),
                                scenario.kappas[state])
        phi = vonmises_sample(rng, cons.mean_direction, cons.concentration)
        h = gamma_sample(rng, scenario.gammas[state])
        pos = Point(pos.x + h * math.cos(phi), pos.y + h * math.sin(phi))
        points.append(pos)
        states.append(state)
        prev_angle = phi
    if len(points) < 3:
        # degenerate start inside the stop radius; force a couple of steps
        raise ValueError("trajectory too short; start region overlaps stop radius")
    return SimResult(trajectory=derive_steps(points), states=np.array(states, dtype=int),
                     truncated=truncated)


def bcrw_step_loglik(step, prev_angle: float, bearings, kappas, gamma: GammaParams) -> float:
    """Log density of one (angle, distance) step in a given state: gamma
    log-density of the distance plus consensus von Mises log-density of the
    direction."""
    phi, h = step
    cons = consensus_vector(prev_angle, bearings, kappas)
    return (gamma_logpdf(h, gamma)
            + vonmises_logpdf(phi, cons.mean_direction, cons.concentration))


def step_logliks(traj: Trajectory, targets, kappas, gamma: GammaParams) -> np.ndarray:
    """bcrw_step_loglik over steps t = 1..T-1 (the steps with a previous
    heading), matching the choice sets built from the same trajectory."""
    out = np.empty(traj.n_steps - 1)
    for i, t in enumerate(range(1, traj.n_steps)):
        out[i] = bcrw_step_loglik(
            (traj.angles[t], traj.distances[t]), traj.angles[t - 1],
            target_bearings(traj.points[t], targets), kappas, gamma)
    return out


def simulate_choice_trajectory(rng: np.random.Generator, hmm: HmmParams, betas,
                               formula, landscape, start: Point, n_steps: int,
                               proposal_M: float, n_candidates: int = 200) -> SimResult:
    """Simulate a walk whose steps follow the discrete-choice model itself.

    At each step a pool of candidate (angle, distance) moves is drawn
    (uniform angle, uniform distance on [0, proposal_M]) and one is selected
    with probability proportional to exp(x' beta) for the current state's
    coefficients. Used to plant land-cover preferences that the plain walk
    cannot express. Candidates falling off the landscape are excluded.
    """
    from .controls import covariate_matrix

    betas = [np.asarray(b, dtype=float) for b in betas]
    pos = start
    prev_angle = wrap_angle(rng.uniform(-math.pi, math.pi))
    points = [pos]
    states = []
    state = int(rng.choice(hmm.n_states, p=hmm.initial))
    for _ in range(n_steps):
        state = int(rng.choice(hmm.n_states, p=hmm.transition[state]))
        ang = rng.uniform(-math.pi, math.pi, size=n_candidates)
        dist = rng.uniform(0.0, proposal_M, size=n_candidates)
        dist[dist == 0.0] = proposal_M / 2.0
        X, ok = covariate_matrix(ang, dist, prev_angle, pos, formula, landscape)
        if not ok.any():
            raise ValueError("all candidate steps left the landscape")
        u = X[ok] @ betas[state]
        u -= u.max()
        p = np.exp(u)
        j = rng.choice(len(p), p=p / p.sum())
        phi, h = ang[ok][j], dist[ok][j]
        pos = Point(pos.x + h * math.cos(phi), pos.y + h * math.sin(phi))
        points.append(pos)
        states.append(state)
        prev_angle = wrap_angle(phi)
    return SimResult(trajectory=derive_steps(points), states=np.array(states, dtype=int))
