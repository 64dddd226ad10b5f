"""Hidden-state fitter: emission probabilities, filtering-smoothing, EM with
a closed-form transition update, multistart, numerical-Hessian standard
errors, and smooth-probability decoding.

Two emission families plug into the same EM core: the conditional-logit
step-selection model (the main fitter) and the direct random-walk step
density (used for equivalence checks). All recursions run in the log domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import bcrw as _bcrw
from .clogit import ClogitProblem, clogit_fit, clogit_logprobs
from .core import ChoiceSet, FitResult, HmmParams, StateParams, Trajectory
from .distance import natural_to_gamma
from .errors import AllRunsFailed, DegenerateState, NumericalUnderflow
from .rng import STREAM_MULTISTART, child_rng

OCCUPANCY_FLOOR = 1e-8
EM_MONOTONE_SLACK = 1e-9


@dataclass(frozen=True)
class EmissionMatrix:
    """Per-time, per-state choice probabilities, held as logs."""

    log_probs: np.ndarray  # (n, K)

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    @property
    def n_states(self) -> int:
        return self.log_probs.shape[1]


@dataclass(frozen=True)
class PosteriorBundle:
    """Filtered, predictive, and smoothed state probabilities plus the
    pairwise posteriors needed by the transition update.

    ``pairwise[i]`` couples the states at choice sets i and i+1;
    ``initial_pairwise`` couples the pre-data state with the first choice
    set. Row sums of pairwise over the earlier state give the later smoothed
    marginal.
    """

    filtered: np.ndarray
    predictive: np.ndarray
    smoothed: np.ndarray
    pairwise: np.ndarray
    initial_pairwise: np.ndarray
    loglik: float


@dataclass
class EmConfig:
    """EM settings: state count, multistart schedule, convergence."""

    K: int
    n_short_runs: int = 20
    short_iters: int = 10
    long_max_iters: int = 500
    tol: float = 1e-8
    seed: int = 0
    initial: np.ndarray | None = None  # initial state distribution; uniform if None
    order_by_mean_distance: bool = True

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")

    def initial_dist(self) -> np.ndarray:
        if self.initial is not None:
            init = np.asarray(self.initial, dtype=float)
            if len(init) != self.K or abs(init.sum() - 1) > 1e-12:
                raise ValueError("initial must be a length-K probability vector")
            return init
        return np.full(self.K, 1.0 / self.K)


def emissions(choice_sets: list[ChoiceSet], state_params) -> EmissionMatrix:
    """Choice probability of the observed step under each state's coefficients."""
    problem = ClogitProblem.from_choice_sets(choice_sets)
    betas = [sp.beta if isinstance(sp, StateParams) else np.asarray(sp, dtype=float)
             for sp in state_params]
    log_probs = np.column_stack([clogit_logprobs(problem, b) for b in betas])
    return EmissionMatrix(log_probs=log_probs)


def filter_smooth(em, hmm: HmmParams) -> PosteriorBundle:
    """Forward filter and backward smoother over the hidden Markov chain.

    The predictive distribution at the first choice set is the initial law
    pushed through one transition. The log-likelihood accumulates the
    per-step normalizers of the filter.
    """
    logem = em.log_probs if isinstance(em, EmissionMatrix) else np.asarray(em, dtype=float)
    n, K = logem.shape
    P = hmm.transition
    if np.any(np.all(np.isneginf(logem), axis=1)):
        raise NumericalUnderflow("a full emission row is zero")

    filtered = np.empty((n, K))
    predictive = np.empty((n, K))
    loglik = 0.0
    pred = hmm.initial @ P
    with np.errstate(divide="ignore"):
        for t in range(n):
            predictive[t] = pred
            la = logem[t] + np.log(pred)
            m = la.max()
            e = np.exp(la - m)
            s = e.sum()
            loglik += m + math.log(s)
            filtered[t] = e / s
            pred = filtered[t] @ P

    smoothed = np.empty((n, K))
    smoothed[n - 1] = filtered[n - 1]
    for t in range(n - 2, -1, -1):
        # ratio of smoothed to predictive at t+1, pulled back through P
        ratio = smoothed[t + 1] / np.maximum(predictive[t + 1], 1e-300)
        smoothed[t] = filtered[t] * (P @ ratio)
        smoothed[t] /= smoothed[t].sum()

    pairwise = np.empty((n - 1, K, K))
    for t in range(1, n):
        back = P * filtered[t - 1][:, None]  # (h, k): pi_hk * filt_{t-1,h}
        back /= np.maximum(back.sum(axis=0, keepdims=True), 1e-300)
        pairwise[t - 1] = back * smoothed[t][None, :]
    back0 = P * hmm.initial[:, None]
    back0 /= np.maximum(back0.sum(axis=0, keepdims=True), 1e-300)
    initial_pairwise = back0 * smoothed[0][None, :]

    return PosteriorBundle(filtered=filtered, predictive=predictive,
                           smoothed=smoothed, pairwise=pairwise,
                           initial_pairwise=initial_pairwise, loglik=float(loglik))


def update_transition(bundle: PosteriorBundle, previous: np.ndarray) -> np.ndarray:
    """Closed-form M-step for the transition matrix.

    Rows whose expected occupancy is numerically zero keep their previous
    values (the data say nothing about them).
    """
    counts = bundle.initial_pairwise + bundle.pairwise.sum(axis=0)
    occupancy = counts.sum(axis=1)
    new = np.array(previous, dtype=float)
    for h in range(counts.shape[0]):
        if occupancy[h] < OCCUPANCY_FLOOR:
            continue
        new[h] = counts[h] / occupancy[h]
    return new


def decode_states(bundle: PosteriorBundle):
    """Most probable state per step from the smoothed marginals.

    Ties break toward the lower state index (argmax convention).
    """
    states = np.argmax(bundle.smoothed, axis=1)
    probs = bundle.smoothed[np.arange(len(states)), states]
    return states, probs


# ---------------------------------------------------------------------------
# Emission models for the EM core


class SsfEmissionModel:
    """Conditional-logit emissions; the M-step is a weighted clogit fit."""

    def __init__(self, choice_sets: list[ChoiceSet]):
        self.problem = ClogitProblem.from_choice_sets(choice_sets)
        self.n_obs = len(choice_sets)
        self.n_params = self.problem.n_params

    def log_emissions(self, params: list[np.ndarray]) -> np.ndarray:
        return np.column_stack([clogit_logprobs(self.problem, b) for b in params])

    def mstep(self, weights: np.ndarray, params: list[np.ndarray]) -> list[np.ndarray]:
        out = []
        for k, beta in enumerate(params):
            w = weights[:, k]
            if w.sum() < OCCUPANCY_FLOOR:
                out.append(np.array(beta))
                continue
            prob = ClogitProblem(X=self.problem.X, offsets=self.problem.offsets,
                                 mask=self.problem.mask, weights=w)
            b, _, _ = clogit_fit(prob, init=beta)
            out.append(b)
        return out

    def pooled_start(self) -> np.ndarray:
        b, _, _ = clogit_fit(self.problem)
        return b


class BcrwEmissionModel:
    """Direct random-walk step density; per-state parameters are packed as
    (eta1, eta2, kappa_0, ..., kappa_p). The M-step is a bounded
    quasi-Newton maximization of the weighted log-density."""

    def __init__(self, traj: Trajectory, targets):
        self.targets = tuple(targets)
        p = len(self.targets)
        n = traj.n_steps - 1
        # unit vectors for the previous heading and each target bearing,
        # plus the unit vector of the realized direction
        U = np.empty((n, p + 1, 2))
        W = np.empty((n, 2))
        self.log_h = np.empty(n)
        self.h = np.empty(n)
        for i, t in enumerate(range(1, traj.n_steps)):
            prev = traj.angles[t - 1]
            U[i, 0] = (math.cos(prev), math.sin(prev))
            th = _bcrw.target_bearings(traj.points[t], self.targets)
            U[i, 1:, 0] = np.cos(th)
            U[i, 1:, 1] = np.sin(th)
            W[i] = (math.cos(traj.angles[t]), math.sin(traj.angles[t]))
            self.h[i] = traj.distances[t]
            self.log_h[i] = math.log(traj.distances[t])
        self.U = U
        self.W = W
        self.n_obs = n
        self.n_params = p + 3

    def state_loglik(self, v: np.ndarray) -> np.ndarray:
        from .circular import log_bessel_i0
        from .distance import gamma_log_partition

        eta1, eta2 = v[0], v[1]
        kap = v[2:]
        V = np.einsum("npc,p->nc", self.U, kap)
        ell = np.hypot(V[:, 0], V[:, 1])
        li0 = np.array([log_bessel_i0(x) for x in ell])
        ang = np.einsum("nc,nc->n", self.W, V) - math.log(2 * math.pi) - li0
        dist = eta1 * self.log_h - eta2 * self.h - gamma_log_partition((eta1, eta2))
        return ang + dist

    def log_emissions(self, params: list[np.ndarray]) -> np.ndarray:
        return np.column_stack([self.state_loglik(v) for v in params])

    def mstep(self, weights: np.ndarray, params: list[np.ndarray]) -> list[np.ndarray]:
        from scipy.optimize import minimize

        out = []
        bounds = [(-0.999, None), (1e-8, None)] + [(None, None)] * (self.n_params - 2)
        for k, v0 in enumerate(params):
            w = weights[:, k]
            if w.sum() < OCCUPANCY_FLOOR:
                out.append(np.array(v0))
                continue
            res = minimize(lambda v: -float(np.dot(w, self.state_loglik(v))),
                           np.asarray(v0, dtype=float), method="L-BFGS-B", bounds=bounds)
            out.append(res.x)
        return out

    def pooled_start(self) -> np.ndarray:
        w = np.ones((self.n_obs, 1))
        return self.mstep(w, [np.array([0.5, 1.0] + [0.5] * (self.n_params - 2))])[0]


# ---------------------------------------------------------------------------
# EM core


@dataclass
class _EmRun:
    params: list[np.ndarray]
    transition: np.ndarray
    bundle: PosteriorBundle
    trace: np.ndarray
    n_iterations: int
    converged: bool


def _run_em(model, params, transition, initial, max_iters, tol) -> _EmRun:
    params = [np.array(p, dtype=float) for p in params]
    transition = np.array(transition, dtype=float)
    trace = []
    bundle = None
    converged = False
    for it in range(max_iters):
        hmm = HmmParams(transition=transition, initial=initial)
        bundle = filter_smooth(model.log_emissions(params), hmm)
        trace.append(bundle.loglik)
        if len(trace) >= 2:
            prev = trace[-2]
            if abs(trace[-1] - prev) < tol * max(1.0, abs(prev)):
                converged = True
                break
        transition = update_transition(bundle, transition)
        params = model.mstep(bundle.smoothed, params)
    else:
        # final E-step so the bundle matches the returned parameters
        hmm = HmmParams(transition=transition, initial=initial)
        bundle = filter_smooth(model.log_emissions(params), hmm)
        trace.append(bundle.loglik)
    return _EmRun(params=params, transition=transition, bundle=bundle,
                  trace=np.array(trace), n_iterations=len(trace), converged=converged)


def _random_start(rng, model, pooled, K):
    params = []
    for _ in range(K):
        scale = 0.5 * np.abs(pooled) + 0.25
        params.append(pooled + rng.normal(size=len(pooled)) * scale)
    transition = rng.dirichlet(np.ones(K), size=K)
    return params, transition


def _fit_multistart(model, config: EmConfig):
    K = config.K
    initial = config.initial_dist()
    pooled = model.pooled_start()

    if K == 1:
        run = _run_em(model, [pooled], np.ones((1, 1)), initial,
                      max_iters=config.long_max_iters, tol=config.tol)
        return run, []

    failures = []
    best = None
    for s in range(config.n_short_runs):
        rng = child_rng(config.seed, STREAM_MULTISTART, s)
        params, transition = _random_start(rng, model, pooled, K)
        try:
            run = _run_em(model, params, transition, initial,
                          max_iters=config.short_iters, tol=config.tol)
        except Exception as exc:  # noqa: BLE001 - per-run failures are data
            failures.append(exc)
            continue
        if best is None or run.bundle.loglik > best.bundle.loglik:
            best = run
    if best is None:
        raise AllRunsFailed(f"all {config.n_short_runs} short runs failed; "
                            f"first error: {failures[0]!r}")
    long_run = _run_em(model, best.params, best.transition, initial,
                       max_iters=config.long_max_iters, tol=config.tol)
    return long_run, failures


def _order_states(run: _EmRun, keys) -> _EmRun:
    order = np.argsort(keys, kind="stable")
    if np.array_equal(order, np.arange(len(keys))):
        return run
    params = [run.params[i] for i in order]
    transition = run.transition[np.ix_(order, order)]
    b = run.bundle
    bundle = PosteriorBundle(
        filtered=b.filtered[:, order], predictive=b.predictive[:, order],
        smoothed=b.smoothed[:, order],
        pairwise=b.pairwise[:, order][:, :, order],
        initial_pairwise=b.initial_pairwise[np.ix_(order, order)],
        loglik=b.loglik)
    return _EmRun(params=params, transition=transition, bundle=bundle,
                  trace=run.trace, n_iterations=run.n_iterations,
                  converged=run.converged)


def mean_distance_key(beta, distance_indices: dict) -> float:
    """Fitted mean step length implied by the distance coefficients; used to
    fix label switching (state 1 = shortest steps)."""
    i1, i2 = distance_indices.get("eta1"), distance_indices.get("eta2")
    if i1 is not None and i2 is not None and beta[i2] > 0 and beta[i1] > -1:
        return (beta[i1] + 1.0) / beta[i2]
    if i2 is not None:
        return -beta[i2]
    return 0.0


def em_fit(choice_sets: list[ChoiceSet], config: EmConfig, formula=None,
           compute_se: bool = False) -> FitResult:
    """Fit the multi-state step-selection model by multistart EM.

    ``formula`` (when given) names the covariates and locates the distance
    coordinates used for canonical state ordering. Standard errors are
    off by default; they cost a full numerical Hessian.
    """
    model = SsfEmissionModel(choice_sets)
    run, _ = _fit_multistart(model, config)
    dist_idx = formula.distance_indices() if formula is not None else {}
    if config.order_by_mean_distance and config.K > 1 and dist_idx:
        run = _order_states(run, [mean_distance_key(b, dist_idx) for b in run.params])
    hmm = HmmParams(transition=run.transition, initial=config.initial_dist())
    std_errors = {}
    if compute_se:
        std_errors = standard_errors_from_model(model, run.params, hmm)
    return FitResult(
        state_params=[StateParams(beta=b) for b in run.params],
        hmm=hmm,
        std_errors=std_errors,
        loglik=run.bundle.loglik,
        smooth_probs=run.bundle.smoothed,
        n_em_iterations=run.n_iterations,
        converged=run.converged,
        loglik_trace=run.trace,
        covariate_names=list(formula.names) if formula is not None else None,
    )


def fit_bcrw(traj: Trajectory, targets, config: EmConfig,
             compute_se: bool = False):
    """Fit the multi-state random walk directly (no control sampling).

    Per-state parameter vectors are (eta1, eta2, kappa_0, ..., kappa_p),
    the same layout as the movement-formula coefficients, so results are
    directly comparable with the discrete-choice fit.
    """
    model = BcrwEmissionModel(traj, targets)
    run, _ = _fit_multistart(model, config)
    if config.order_by_mean_distance and config.K > 1:
        run = _order_states(run, [mean_distance_key(v, {"eta1": 0, "eta2": 1})
                                  for v in run.params])
    hmm = HmmParams(transition=run.transition, initial=config.initial_dist())
    std_errors = {}
    if compute_se:
        std_errors = standard_errors_from_model(model, run.params, hmm)
    return FitResult(
        state_params=[StateParams(beta=v) for v in run.params],
        hmm=hmm,
        std_errors=std_errors,
        loglik=run.bundle.loglik,
        smooth_probs=run.bundle.smoothed,
        n_em_iterations=run.n_iterations,
        converged=run.converged,
        loglik_trace=run.trace,
        covariate_names=["log_dist", "neg_dist", "cos_persist"]
        + [f"cos_target_{i}" for i in range(model.n_params - 3)],
    )


def observed_loglik(choice_sets: list[ChoiceSet], state_params, hmm: HmmParams) -> float:
    """Observed-data log-likelihood at arbitrary parameter values."""
    em = emissions(choice_sets, state_params)
    return filter_smooth(em, hmm).loglik


# ---------------------------------------------------------------------------
# Standard errors


def _pack_transition(transition: np.ndarray) -> np.ndarray:
    """Row-wise logits with the diagonal as reference category."""
    K = transition.shape[0]
    tr = np.clip(transition, 1e-12, None)
    out = []
    for h in range(K):
        for k in range(K):
            if k != h:
                out.append(math.log(tr[h, k] / tr[h, h]))
    return np.array(out)


def _unpack_transition(u: np.ndarray, K: int) -> np.ndarray:
    P = np.empty((K, K))
    i = 0
    for h in range(K):
        z = np.zeros(K)
        for k in range(K):
            if k != h:
                z[k] = u[i]
                i += 1
        z -= z.max()
        e = np.exp(z)
        P[h] = e / e.sum()
    return P


def standard_errors_from_model(model, params: list[np.ndarray], hmm: HmmParams) -> dict:
    """Standard errors from the numerical Hessian of the observed loglik.

    The transition matrix is differentiated through an unconstrained
    row-logit map; its standard errors are transported back to the
    probability scale by the delta method. When the negative Hessian is not
    positive definite the affected coordinates are reported as NaN and the
    result is flagged.
    """
    K = len(params)
    r = len(params[0])
    theta0 = np.concatenate([np.concatenate(params),
                             _pack_transition(hmm.transition) if K > 1 else []])
    initial = hmm.initial

    def loglik(theta):
        ps = [theta[k * r:(k + 1) * r] for k in range(K)]
        tr = _unpack_transition(theta[K * r:], K) if K > 1 else np.ones((1, 1))
        h = HmmParams(transition=tr, initial=initial)
        return filter_smooth(model.log_emissions(ps), h).loglik

    H = _numerical_hessian(loglik, theta0)
    negH = -H
    eigvals = np.linalg.eigvalsh(negH)
    not_pd = bool(eigvals.min() <= 0)
    if not_pd:
        cov = np.linalg.pinv(negH)
    else:
        cov = np.linalg.inv(negH)
    var = np.diag(cov).copy()
    se = np.where(var > 0, np.sqrt(np.abs(var)), np.nan)

    beta_se = [se[k * r:(k + 1) * r] for k in range(K)]
    trans_se = np.full((K, K), np.nan)
    if K > 1:
        idx = K * r
        for h in range(K):
            cols = list(range(idx + h * (K - 1), idx + (h + 1) * (K - 1)))
            cov_row = cov[np.ix_(cols, cols)]
            pi_row = hmm.transition[h]
            others = [k for k in range(K) if k != h]
            for k in range(K):
                # d pi_hk / d u_hm, m ranging over the off-diagonal logits
                jac = np.array([pi_row[k] * ((k == m) - pi_row[m]) for m in others])
                v = float(jac @ cov_row @ jac)
                trans_se[h, k] = math.sqrt(v) if v > 0 else np.nan
    return {"state_params": beta_se, "transition": trans_se,
            "not_positive_definite": not_pd}


def standard_errors(choice_sets: list[ChoiceSet], state_params, hmm: HmmParams) -> dict:
    betas = [sp.beta if isinstance(sp, StateParams) else np.asarray(sp, dtype=float)
             for sp in state_params]
    return standard_errors_from_model(SsfEmissionModel(choice_sets), betas, hmm)


def _numerical_hessian(f, x0: np.ndarray) -> np.ndarray:
    """Central-difference Hessian with per-coordinate steps
    max(1e-5, 1e-5 |x_i|)."""
    d = len(x0)
    h = np.maximum(1e-5, 1e-5 * np.abs(x0))
    H = np.empty((d, d))
    f0 = f(x0)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h[i]
        H[i, i] = (f(x0 + ei) - 2.0 * f0 + f(x0 - ei)) / (h[i] * h[i])
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = h[j]
            H[i, j] = H[j, i] = (
                f(x0 + ei + ej) - f(x0 + ei - ej) - f(x0 - ei + ej) + f(x0 - ei - ej)
            ) / (4.0 * h[i] * h[j])
    return H
