"""Weighted conditional logistic regression.

This is both the single-state step-selection fitter and the per-state
maximizer inside the EM algorithm (weights = smoothed state probabilities).
The log-likelihood is concave, so a Newton iteration with step halving is
used. All linear predictors go through logsumexp; concentrations around 20
put utilities near +-40, far outside naive exp territory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ChoiceSet
from .errors import NotIdentified, Separation

GRAD_TOL = 1e-8
MAX_NEWTON_ITERS = 100
SEPARATION_NORM = 1e3
# an average per-set log choice probability above -1e-8 means the observed
# choices are predicted essentially perfectly, the separation signature
PERFECT_FIT_TOL = 1e-8
# relative eigenvalue cutoff below which -hess counts as singular
IDENT_COND_TOL = 1e-12
WEIGHT_FLOOR = 1e-12  # time steps below this weight are numerical no-ops


@dataclass
class ClogitProblem:
    """Choice sets padded into dense arrays for vectorized evaluation.

    ``X`` is (n, A, r) with the observed alternative at index 0, ``mask``
    flags real alternatives (padding rows get utility -inf), ``weights``
    is the per-time-step weight vector.
    """

    X: np.ndarray
    offsets: np.ndarray
    mask: np.ndarray
    weights: np.ndarray

    @classmethod
    def from_choice_sets(cls, sets: list[ChoiceSet], weights=None) -> "ClogitProblem":
        n = len(sets)
        if n == 0:
            raise ValueError("no choice sets")
        r = sets[0].n_covariates
        A = max(cs.n_alternatives for cs in sets)
        X = np.zeros((n, A, r))
        off = np.full((n, A), -np.inf)
        mask = np.zeros((n, A), dtype=bool)
        for i, cs in enumerate(sets):
            a = cs.n_alternatives
            if cs.n_covariates != r:
                raise ValueError("covariate dimension varies across choice sets")
            X[i, :a] = cs.covariates
            off[i, :a] = cs.offsets
            mask[i, :a] = True
        w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
        if len(w) != n:
            raise ValueError("weights length must match the number of choice sets")
        return cls(X=X, offsets=off, mask=mask, weights=w)

    @property
    def n_params(self) -> int:
        return self.X.shape[2]


def _logsumexp_rows(u: np.ndarray) -> np.ndarray:
    """Row-wise logsumexp; padding entries are -inf and contribute nothing."""
    m = np.max(u, axis=1)
    with np.errstate(invalid="ignore"):
        return m + np.log(np.exp(u - m[:, None]).sum(axis=1))


def clogit_logprob(cs: ChoiceSet, beta) -> float:
    """Log probability that the observed alternative is chosen."""
    beta = np.asarray(beta, dtype=float)
    u = cs.covariates @ beta + cs.offsets
    m = np.max(u)
    return float(u[0] - m - np.log(np.exp(u - m).sum()))


def clogit_logprobs(problem: ClogitProblem, beta) -> np.ndarray:
    """Vectorized log choice probabilities, one per time step."""
    u = problem.X @ np.asarray(beta, dtype=float) + problem.offsets
    return u[:, 0] - _logsumexp_rows(u)


def _active(problem: ClogitProblem):
    active = problem.weights > WEIGHT_FLOOR
    if active.all():
        return problem.X, problem.offsets, problem.weights
    return problem.X[active], problem.offsets[active], problem.weights[active]


def clogit_value(problem: ClogitProblem, beta) -> float:
    """Weighted log-likelihood only (cheap path for line searches)."""
    X, off, w = _active(problem)
    u = X @ np.asarray(beta, dtype=float) + off
    return float(np.dot(w, u[:, 0] - _logsumexp_rows(u)))


def clogit_objective(problem: ClogitProblem, beta):
    """Weighted log-likelihood with analytic gradient and Hessian.

    gradient = sum_t w_t (x_0t - E[x]), hessian = -sum_t w_t Cov[x], with
    moments under each set's choice probabilities.
    """
    beta = np.asarray(beta, dtype=float)
    X, off, w = _active(problem)
    n, A, r = X.shape
    u = X @ beta + off
    m = np.max(u, axis=1)
    with np.errstate(invalid="ignore"):
        E = np.exp(u - m[:, None])
    S = E.sum(axis=1)
    value = float(np.dot(w, u[:, 0] - m - np.log(S)))
    P = E / S[:, None]
    Ex = np.einsum("na,nar->nr", P, X)
    grad = w @ (X[:, 0, :] - Ex)
    X2d = X.reshape(n * A, r)
    wp = (w[:, None] * P).reshape(n * A)
    Exx = (X2d * wp[:, None]).T @ X2d
    hess = -(Exx - (w[:, None] * Ex).T @ Ex)
    return value, grad, hess


def clogit_fit(problem: ClogitProblem, init=None, max_iters: int = MAX_NEWTON_ITERS):
    """Maximize by Newton-Raphson with step halving.

    Returns (beta_hat, converged, final_grad_norm). Raises Separation when
    the likelihood is unbounded and NotIdentified when the within-set
    covariate covariance is singular.
    """
    r = problem.n_params
    beta = np.zeros(r) if init is None else np.array(init, dtype=float)
    total_weight = float(np.sum(problem.weights[problem.weights > WEIGHT_FLOOR]))
    perfect = -PERFECT_FIT_TOL * max(total_weight, WEIGHT_FLOOR)
    value, grad, hess = clogit_objective(problem, beta)
    for _ in range(max_iters):
        # a singular -hess means some covariate combination is constant
        # within every choice set, so it stays singular for all beta
        eigs = np.linalg.eigvalsh(-hess)
        if eigs[-1] <= 0.0 or eigs[0] <= IDENT_COND_TOL * eigs[-1]:
            raise NotIdentified("singular within-set covariate covariance")
        gnorm = float(np.max(np.abs(grad)))
        if gnorm <= GRAD_TOL:
            if value > perfect:
                raise Separation("observed choices predicted perfectly; "
                                 "likelihood appears unbounded")
            return beta, True, gnorm
        if float(np.linalg.norm(beta)) > SEPARATION_NORM:
            raise Separation("coefficients diverging; likelihood appears unbounded")
        step = np.linalg.solve(-hess, grad)
        # step halving: concavity guarantees some fraction of the Newton step helps
        scale = 1.0
        accepted = None
        tiny = 1e-14 * (1.0 + float(np.max(np.abs(beta))))
        for _ in range(40):
            cand = beta + scale * step
            v2 = clogit_value(problem, cand)
            if np.isfinite(v2) and v2 > value:
                accepted = (cand, v2)
                break
            if scale * float(np.max(np.abs(step))) <= tiny:
                break
            scale *= 0.5
        if accepted is None:
            # no fraction of an ascent direction improves the value, so any
            # remaining gain is below float resolution: converged in practice
            if value > perfect:
                raise Separation("observed choices predicted perfectly; "
                                 "likelihood appears unbounded")
            return beta, True, gnorm
        beta, value = accepted
        _, grad, hess = clogit_objective(problem, beta)
    gnorm = float(np.max(np.abs(grad)))
    if gnorm > GRAD_TOL and float(np.linalg.norm(beta)) > SEPARATION_NORM:
        raise Separation("coefficients diverging; likelihood appears unbounded")
    return beta, gnorm <= GRAD_TOL, gnorm
