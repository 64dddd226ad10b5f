"""Shared domain records: trajectories, choice sets, parameters, landscapes.

Angle convention used everywhere: radians in (-pi, pi], measured with the
two-argument arctangent (0 = +x axis, counter-clockwise positive). Time steps
are assumed equally spaced; timestamps are not modeled.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DuplicateConsecutivePoints, OutOfGrid


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("Point coordinates must be finite")


@dataclass(frozen=True)
class Trajectory:
    """Ordered planar locations plus the polar decomposition of each step.

    ``points`` has length T+1; ``angles`` and ``distances`` have length T,
    with angles[t] the bearing from points[t] to points[t+1] and distances[t]
    the (strictly positive) Euclidean step length.
    """

    points: tuple[Point, ...]
    angles: np.ndarray
    distances: np.ndarray

    @property
    def n_steps(self) -> int:
        return len(self.angles)


def derive_steps(points) -> Trajectory:
    """Build a Trajectory from an ordered sequence of locations.

    Raises DuplicateConsecutivePoints if two consecutive locations coincide,
    since log step length enters the models as a covariate.
    """
    pts = tuple(p if isinstance(p, Point) else Point(*p) for p in points)
    if len(pts) < 3:
        raise ValueError("need at least 3 points")
    xy = np.array([(p.x, p.y) for p in pts])
    d = np.diff(xy, axis=0)
    dist = np.hypot(d[:, 0], d[:, 1])
    if np.any(dist == 0.0):
        t = int(np.argmax(dist == 0.0))
        raise DuplicateConsecutivePoints(f"points {t} and {t + 1} coincide")
    ang = np.arctan2(d[:, 1], d[:, 0])
    # arctan2 returns [-pi, pi]; fold -pi onto +pi for the (-pi, pi] convention
    ang[ang == -np.pi] = np.pi
    return Trajectory(points=pts, angles=ang, distances=dist)


@dataclass(frozen=True)
class ChoiceSet:
    """One observed step plus J controls at a single time index.

    Alternative 0 is the observed step. Arrays are aligned: ``angles`` and
    ``distances`` have length J+1, ``covariates`` is (J+1, r), ``offsets``
    has length J+1 (log base-measure values, 0 for the gamma family).
    """

    time_index: int
    angles: np.ndarray
    distances: np.ndarray
    covariates: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        n = len(self.angles)
        if not (len(self.distances) == n == self.covariates.shape[0] == len(self.offsets)):
            raise ValueError("choice-set arrays misaligned")
        if np.any(self.distances <= 0):
            raise ValueError("distances must be strictly positive")

    @property
    def n_alternatives(self) -> int:
        return len(self.angles)

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]


@dataclass(frozen=True)
class StateParams:
    """Coefficient vector for one hidden state."""

    beta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))


@dataclass(frozen=True)
class HmmParams:
    """Row-stochastic transition matrix and initial state distribution."""

    transition: np.ndarray
    initial: np.ndarray

    def __post_init__(self):
        tr = np.asarray(self.transition, dtype=float)
        init = np.asarray(self.initial, dtype=float)
        object.__setattr__(self, "transition", tr)
        object.__setattr__(self, "initial", init)
        if tr.ndim != 2 or tr.shape[0] != tr.shape[1]:
            raise ValueError("transition must be square")
        if np.any(tr < 0) or np.any(tr > 1) or np.any(np.abs(tr.sum(axis=1) - 1) > 1e-12):
            raise ValueError("transition rows must be probabilities summing to 1")
        if abs(init.sum() - 1) > 1e-12 or np.any(init < 0):
            raise ValueError("initial must be a probability vector")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]


@dataclass(frozen=True)
class LandscapeGrid:
    """Regular grid of land-cover class codes with named attraction targets.

    ``origin`` is the south-west corner; ``classes`` is stored row-major from
    the north-west corner (row 0 = northern-most row), matching the on-disk
    CSV body.
    """

    origin: Point
    cell_size: float
    classes: np.ndarray
    legend: dict[int, str] = field(default_factory=dict)
    targets: dict[str, Point] = field(default_factory=dict)

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        object.__setattr__(self, "classes", np.asarray(self.classes, dtype=int))

    def class_at(self, x: float, y: float) -> int:
        nrows, ncols = self.classes.shape
        col = int(math.floor((x - self.origin.x) / self.cell_size))
        row_s = int(math.floor((y - self.origin.y) / self.cell_size))
        row = nrows - 1 - row_s
        if not (0 <= col < ncols and 0 <= row < nrows):
            raise OutOfGrid(f"({x}, {y}) outside landscape grid")
        return int(self.classes[row, col])


@dataclass
class FitResult:
    """Output of a multi-state fit."""

    state_params: list[StateParams]
    hmm: HmmParams
    std_errors: dict
    loglik: float
    smooth_probs: np.ndarray
    n_em_iterations: int
    converged: bool
    loglik_trace: np.ndarray | None = None
    covariate_names: list[str] | None = None


# ---------------------------------------------------------------------------
# File formats


def write_trajectory_csv(path, traj: Trajectory) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y"])
        for p in traj.points:
            w.writerow([repr(float(p.x)), repr(float(p.y))])


def read_trajectory_csv(path) -> Trajectory:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if [h.strip() for h in header] != ["x", "y"]:
            raise ValueError(f"expected header 'x,y', got {header!r}")
        pts = [Point(float(row[0]), float(row[1])) for row in r if row]
    return derive_steps(pts)


def write_states_csv(path, states) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "true_state"])
        for t, s in enumerate(states):
            w.writerow([t, int(s)])


def read_states_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        return np.array([int(row[1]) for row in r if row], dtype=int)


def write_landscape(json_path, grid: LandscapeGrid) -> None:
    """Write the JSON header; the class-code body goes in a sibling .csv."""
    body_path = str(json_path).rsplit(".", 1)[0] + ".csv"
    header = {
        "origin": {"x": grid.origin.x, "y": grid.origin.y},
        "cell_size": grid.cell_size,
        "legend": {str(k): v for k, v in grid.legend.items()},
        "targets": {n: {"x": p.x, "y": p.y} for n, p in grid.targets.items()},
        "body": body_path.rsplit("/", 1)[-1],
    }
    with open(json_path, "w") as fh:
        json.dump(header, fh, indent=2)
    np.savetxt(body_path, grid.classes, fmt="%d", delimiter=",")


def read_landscape(json_path) -> LandscapeGrid:
    with open(json_path) as fh:
        header = json.load(fh)
    base = str(json_path).rsplit("/", 1)
    body_path = (base[0] + "/" if len(base) == 2 else "") + header["body"]
    classes = np.loadtxt(body_path, dtype=int, delimiter=",", ndmin=2)
    return LandscapeGrid(
        origin=Point(header["origin"]["x"], header["origin"]["y"]),
        cell_size=header["cell_size"],
        classes=classes,
        legend={int(k): v for k, v in header.get("legend", {}).items()},
        targets={n: Point(p["x"], p["y"]) for n, p in header.get("targets", {}).items()},
    )
