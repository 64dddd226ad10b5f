"""Control-location sampling and choice-set assembly.

Controls are matched to each observed step: directions uniform on the
circle, distances either uniform on [0, M] or from the exponential-family
distance law with state-independent parameter eta_tilde. Covariate vectors
are built from a declarative term list so the same machinery serves the
movement-equivalent formula and land-cover models.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .circular import wrap_angle
from .core import ChoiceSet, LandscapeGrid, Point, Trajectory
from .distance import natural_to_gamma, gamma_sample
from .errors import OutOfGrid
from .rng import STREAM_CONTROLS, child_rng


# ---------------------------------------------------------------------------
# Sampling schemes

@dataclass(frozen=True)
class UniformScheme:
    """Control distances uniform on [0, M]; M must cover observed distances."""

    M: float

    def __post_init__(self):
        if self.M <= 0:
            raise ValueError("M must be positive")


@dataclass(frozen=True)
class ParametricScheme:
    """Control distances from the distance family with natural params eta_tilde.

    eta_tilde cannot depend on the hidden state, which is unobserved.
    """

    eta_tilde: tuple[float, float]


SamplingScheme = Union[UniformScheme, ParametricScheme]


def sample_controls(rng: np.random.Generator, scheme: SamplingScheme, J: int):
    """Draw J control (angle, distance) pairs around a step origin.

    Angles are uniform on the circle. Exact-zero distances are resampled so
    log-distance covariates stay finite.
    """
    if J < 1:
        raise ValueError("J must be >= 1")
    angles = wrap_angle(rng.uniform(-math.pi, math.pi, size=J))
    if isinstance(scheme, UniformScheme):
        dist = rng.uniform(0.0, scheme.M, size=J)
        while np.any(dist == 0.0):
            n0 = int(np.sum(dist == 0.0))
            dist[dist == 0.0] = rng.uniform(0.0, scheme.M, size=n0)
    else:
        g = natural_to_gamma(scheme.eta_tilde)
        dist = np.array([gamma_sample(rng, g) for _ in range(J)])
        while np.any(dist == 0.0):
            dist[dist == 0.0] = [gamma_sample(rng, g) for _ in range(int(np.sum(dist == 0.0)))]
    return np.atleast_1d(angles), dist


# ---------------------------------------------------------------------------
# Covariate formulas

@dataclass(frozen=True)
class LogDistance:
    name = "log_dist"


@dataclass(frozen=True)
class NegDistance:
    name = "neg_dist"


@dataclass(frozen=True)
class CosPersistence:
    name = "cos_persist"


@dataclass(frozen=True)
class CosTarget:
    target: str

    @property
    def name(self) -> str:
        return f"cos_target_{self.target}"


@dataclass(frozen=True)
class LandcoverIndicator:
    code: int
    label: str = ""

    @property
    def name(self) -> str:
        return f"lc_{self.label or self.code}"


Term = Union[LogDistance, NegDistance, CosPersistence, CosTarget, LandcoverIndicator]


@dataclass(frozen=True)
class CovariateFormula:
    """Ordered covariate terms; term order fixes the meaning of each beta.

    ``log_base_measure`` supplies the per-alternative offset (used under
    uniform control-distance sampling; None means offset 0, which is exact
    for the gamma family and for parametric sampling).
    """

    terms: tuple[Term, ...]
    log_base_measure: Optional[Callable[[float], float]] = None

    @property
    def names(self) -> list[str]:
        return [t.name for t in self.terms]

    @property
    def n_terms(self) -> int:
        return len(self.terms)

    def needs_landscape(self) -> bool:
        return any(isinstance(t, LandcoverIndicator) for t in self.terms)

    def target_names(self) -> list[str]:
        return [t.target for t in self.terms if isinstance(t, CosTarget)]

    def distance_indices(self) -> dict[str, int]:
        """Positions of the natural-parameter coordinates, if present."""
        out = {}
        for i, t in enumerate(self.terms):
            if isinstance(t, LogDistance):
                out["eta1"] = i
            elif isinstance(t, NegDistance):
                out["eta2"] = i
        return out


def movement_formula(target_names=("target",)) -> CovariateFormula:
    """The formula whose coefficients are the random-walk parameters:
    (log h, -h, cos persistence, cos to each target)."""
    terms = [LogDistance(), NegDistance(), CosPersistence()]
    terms += [CosTarget(n) for n in target_names]
    return CovariateFormula(tuple(terms))


def covariate_matrix(angles, distances, prev_angle, origin: Point,
                     formula: CovariateFormula,
                     landscape: Optional[LandscapeGrid] = None,
                     targets: Optional[dict] = None):
    """Evaluate the formula for a batch of alternatives sharing one origin.

    Target bearings are computed once from the origin and shared across
    alternatives. Returns (X, in_grid) where ``in_grid`` flags alternatives
    whose endpoint lies inside the landscape (all True when no land-cover
    term is present).
    """
    angles = np.asarray(angles, dtype=float)
    distances = np.asarray(distances, dtype=float)
    n = len(angles)
    if targets is None:
        targets = landscape.targets if landscape is not None else {}

    bearings = {}
    for tname in formula.target_names():
        if tname not in targets:
            raise ValueError(f"formula references unknown target {tname!r}")
        p = targets[tname]
        bearings[tname] = math.atan2(p.y - origin.y, p.x - origin.x)

    need_lc = formula.needs_landscape()
    in_grid = np.ones(n, dtype=bool)
    codes = None
    if need_lc:
        if landscape is None:
            raise ValueError("formula has land-cover terms but no landscape given")
        ex = origin.x + distances * np.cos(angles)
        ey = origin.y + distances * np.sin(angles)
        codes = np.empty(n, dtype=int)
        for j in range(n):
            try:
                codes[j] = landscape.class_at(ex[j], ey[j])
            except OutOfGrid:
                in_grid[j] = False
                codes[j] = -1

    X = np.empty((n, formula.n_terms))
    for i, term in enumerate(formula.terms):
        if isinstance(term, LogDistance):
            X[:, i] = np.log(distances)
        elif isinstance(term, NegDistance):
            X[:, i] = -distances
        elif isinstance(term, CosPersistence):
            X[:, i] = np.cos(angles - prev_angle)
        elif isinstance(term, CosTarget):
            X[:, i] = np.cos(angles - bearings[term.target])
        else:
            X[:, i] = (codes == term.code).astype(float)
    return X, in_grid


def build_choice_set(observed, controls, prev_angle: float, origin: Point,
                     formula: CovariateFormula,
                     landscape: Optional[LandscapeGrid] = None,
                     targets: Optional[dict] = None,
                     time_index: int = 0) -> ChoiceSet:
    """Assemble one ChoiceSet: the observed step at index 0, then controls.

    Controls whose endpoint falls outside the landscape are dropped
    (shrinking J); an out-of-grid observed step is a hard error.
    """
    c_ang, c_dist = controls
    angles = np.concatenate(([observed[0]], c_ang))
    distances = np.concatenate(([observed[1]], c_dist))
    X, in_grid = covariate_matrix(angles, distances, prev_angle, origin,
                                  formula, landscape, targets)
    if not in_grid[0]:
        raise OutOfGrid(f"observed step at t={time_index} leaves the landscape")
    if not in_grid.all():
        angles, distances, X = angles[in_grid], distances[in_grid], X[in_grid]
    if formula.log_base_measure is None:
        offsets = np.zeros(len(angles))
    else:
        offsets = np.array([formula.log_base_measure(h) for h in distances])
    return ChoiceSet(time_index=time_index, angles=angles, distances=distances,
                     covariates=X, offsets=offsets)


def build_choice_sets(seed: int, traj: Trajectory, scheme: SamplingScheme,
                      J: int, formula: CovariateFormula,
                      landscape: Optional[LandscapeGrid] = None,
                      targets: Optional[dict] = None) -> list[ChoiceSet]:
    """One choice set per step t = 1..T-1 (step 0 has no previous heading).

    Controls are drawn fresh per time step from a per-t substream of
    ``seed``, so the result is independent of iteration order.
    """
    if isinstance(scheme, UniformScheme) and float(np.max(traj.distances)) > scheme.M:
        import warnings
        warnings.warn(
            f"uniform scheme M={scheme.M} does not cover the largest observed "
            f"distance {np.max(traj.distances):.3f}; estimates may be biased",
            stacklevel=2,
        )
    sets = []
    for t in range(1, traj.n_steps):
        rng = child_rng(seed, STREAM_CONTROLS, t)
        ctrl = sample_controls(rng, scheme, J)
        cs = build_choice_set(
            observed=(traj.angles[t], traj.distances[t]),
            controls=ctrl,
            prev_angle=traj.angles[t - 1],
            origin=traj.points[t],
            formula=formula,
            landscape=landscape,
            targets=targets,
            time_index=t,
        )
        sets.append(cs)
    return sets


def correct_parametric_bias(eta_ssf, eta_tilde):
    """Recover distance-law natural parameters from an SSF fit under
    parametric control sampling: eta_hat = eta_ssf + eta_tilde, per state."""
    eta_ssf = np.asarray(eta_ssf, dtype=float)
    eta_tilde = np.asarray(eta_tilde, dtype=float)
    if eta_ssf.shape[-1] != eta_tilde.shape[-1]:
        raise ValueError("natural-parameter dimensions differ")
    return eta_ssf + eta_tilde


def apply_bias_correction(betas, formula: CovariateFormula, eta_tilde):
    """Shift only the distance coordinates of full coefficient vectors."""
    idx = formula.distance_indices()
    out = [np.array(b, dtype=float) for b in betas]
    for b in out:
        if "eta1" in idx:
            b[idx["eta1"]] += eta_tilde[0]
        if "eta2" in idx:
            b[idx["eta2"]] += eta_tilde[1]
    return out


# ---------------------------------------------------------------------------
# Interchange format

def write_choice_sets_csv(path, sets: list[ChoiceSet], names: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "alt_id", "is_case", "angle", "distance", *names, "offset"])
        for cs in sets:
            for j in range(cs.n_alternatives):
                w.writerow([cs.time_index, j, int(j == 0),
                            repr(float(cs.angles[j])), repr(float(cs.distances[j])),
                            *[repr(float(v)) for v in cs.covariates[j]],
                            repr(float(cs.offsets[j]))])


def read_choice_sets_csv(path) -> tuple[list[ChoiceSet], list[str]]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        names = header[5:-1]
        by_t: dict[int, list] = {}
        for row in r:
            if row:
                by_t.setdefault(int(row[0]), []).append(row)
    sets = []
    for t in sorted(by_t):
        rows = sorted(by_t[t], key=lambda row: int(row[1]))
        if int(rows[0][2]) != 1:
            raise ValueError(f"choice set t={t} has no case at alt_id 0")
        sets.append(ChoiceSet(
            time_index=t,
            angles=np.array([float(row[3]) for row in rows]),
            distances=np.array([float(row[4]) for row in rows]),
            covariates=np.array([[float(v) for v in row[5:-1]] for row in rows]),
            offsets=np.array([float(row[-1]) for row in rows]),
        ))
    return sets, names
