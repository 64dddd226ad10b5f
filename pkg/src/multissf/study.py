"""Replicate-level experiment runner.

``run_study`` simulates N independent trajectories from a multi-state walk
scenario, fits each with the requested samplers/estimators, aligns the
hidden-state labels to the truth, and summarizes bias and standard
deviation per parameter. ``equivalence_report`` compares the direct
random-walk fit against the discrete-choice fits on a single trajectory.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .bcrw import BcrwScenario, simulate_trajectory
from .controls import (ParametricScheme, SamplingScheme, UniformScheme,
                       apply_bias_correction, build_choice_sets,
                       movement_formula)
from .core import Trajectory
from .hmm import EmConfig, em_fit, fit_bcrw
from .rng import STREAM_REPLICATE, child_rng, child_seed


def scheme_label(scheme) -> str:
    if isinstance(scheme, UniformScheme):
        return f"uniform(M={scheme.M:g})"
    return f"parametric(eta_tilde=({scheme.eta_tilde[0]:g},{scheme.eta_tilde[1]:g}))"


@dataclass
class StudyConfig:
    """One simulation study: scenario, replicate count, sampling schemes."""

    scenario: BcrwScenario
    N: int
    J: int
    schemes: tuple[SamplingScheme, ...]
    estimators: tuple[str, ...] = ("ssf",)  # subset of {"ssf", "bcrw"}
    seed: int = 0
    n_jobs: int = 1
    n_short_runs: int = 20
    short_iters: int = 10
    long_max_iters: int = 500
    tol: float = 1e-8

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("N must be >= 2")
        if self.J < 1:
            raise ValueError("J must be >= 1")
        for e in self.estimators:
            if e not in ("ssf", "bcrw"):
                raise ValueError(f"unknown estimator {e!r}")


def parameter_names(K: int, covariate_names) -> list[str]:
    names = []
    if K == 2:
        names = ["q1", "q2"]
    elif K > 2:
        names = [f"pi{h + 1}{k + 1}" for h in range(K) for k in range(K) if k != h]
    for s in range(K):
        names += [f"state{s + 1}.{c}" for c in covariate_names]
    return names


def true_parameter_vector(scenario: BcrwScenario) -> np.ndarray:
    K = scenario.hmm.n_states
    vals = []
    if K > 1:
        for h in range(K):
            for k in range(K):
                if k != h:
                    vals.append(scenario.hmm.transition[h, k])
    for s in range(K):
        g = scenario.gammas[s]
        vals += [g.shape - 1.0, 1.0 / g.scale, *scenario.kappas[s]]
    return np.array(vals)


def _truth_alignment(scenario: BcrwScenario) -> np.ndarray:
    """perm[s] = index of true state s among the states sorted by mean step
    length ascending (the fitter's canonical order)."""
    means = np.array([g.mean for g in scenario.gammas])
    asc = np.argsort(means, kind="stable")
    perm = np.empty(len(means), dtype=int)
    perm[asc] = np.arange(len(means))
    return perm


def _flatten_fit(fit, perm: np.ndarray) -> np.ndarray:
    """Parameter vector in true-state order, transitions first."""
    K = len(fit.state_params)
    vals = []
    if K > 1:
        tr = fit.hmm.transition[np.ix_(perm, perm)]
        for h in range(K):
            for k in range(K):
                if k != h:
                    vals.append(tr[h, k])
    for s in range(K):
        vals.extend(fit.state_params[perm[s]].beta)
    return np.array(vals)


@dataclass
class ReplicateResult:
    index: int
    estimates: dict  # (scheme_label, estimator) -> parameter vector
    loglik_traces: dict
    error: str | None = None
    truncated: bool = False


@dataclass
class StudyReport:
    """Per-parameter bias and spread for every (scheme, estimator) cell.

    ``estimates`` maps cell labels to (n_ok, P) arrays of replicate
    estimates; bias uses divisor N and Sd uses N-1, both over successful
    replicates only.
    """

    parameters: list[str]
    truth: np.ndarray
    estimates: dict
    n_failed: int
    n_total: int
    errors: list = field(default_factory=list)

    def bias(self, cell) -> np.ndarray:
        est = self.estimates[cell]
        return est.mean(axis=0) - self.truth

    def sd(self, cell) -> np.ndarray:
        return self.estimates[cell].std(axis=0, ddof=1)

    @property
    def failure_fraction(self) -> float:
        return self.n_failed / self.n_total

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["parameter", "scheme", "estimator", "bias", "sd", "n_ok"])
            for (scheme, estimator), est in sorted(self.estimates.items()):
                b = est.mean(axis=0) - self.truth
                s = est.std(axis=0, ddof=1)
                for i, p in enumerate(self.parameters):
                    w.writerow([p, scheme, estimator, repr(float(b[i])),
                                repr(float(s[i])), est.shape[0]])
            # tolerance footnote: bias checks elsewhere allow +-3 Sd/sqrt(N)
            # of Monte Carlo error on top of any reference bias

    def to_json(self) -> dict:
        return {
            "parameters": self.parameters,
            "truth": self.truth.tolist(),
            "n_total": self.n_total,
            "n_failed": self.n_failed,
            "cells": {
                f"{scheme}|{estimator}": {
                    "estimates": est.tolist(),
                    "bias": (est.mean(axis=0) - self.truth).tolist(),
                    "sd": est.std(axis=0, ddof=1).tolist(),
                    "n_ok": est.shape[0],
                }
                for (scheme, estimator), est in sorted(self.estimates.items())
            },
            "note": "bias tolerance convention: |bias| <= |reference bias| "
                    "+ 3*reference_sd/sqrt(N)",
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)


def _run_replicate(config: StudyConfig, i: int, perm: np.ndarray) -> ReplicateResult:
    try:
        rng = child_rng(config.seed, STREAM_REPLICATE, i, 0)
        sim = simulate_trajectory(rng, config.scenario)
        K = config.scenario.hmm.n_states
        formula = movement_formula([f"target{j}" for j in range(len(config.scenario.targets))])
        targets = {f"target{j}": p for j, p in enumerate(config.scenario.targets)}
        estimates = {}
        traces = {}
        if "ssf" in config.estimators:
            for j, scheme in enumerate(config.schemes):
                sets = build_choice_sets(
                    child_seed(config.seed, STREAM_REPLICATE, i, 1 + j),
                    sim.trajectory, scheme, config.J, formula, targets=targets)
                em = EmConfig(K=K, seed=child_seed(config.seed, STREAM_REPLICATE, i, 100 + j),
                              n_short_runs=config.n_short_runs,
                              short_iters=config.short_iters,
                              long_max_iters=config.long_max_iters, tol=config.tol)
                fit = em_fit(sets, em, formula=formula)
                if isinstance(scheme, ParametricScheme):
                    corrected = apply_bias_correction(
                        [sp.beta for sp in fit.state_params], formula, scheme.eta_tilde)
                    for sp, b in zip(fit.state_params, corrected):
                        sp.beta[:] = b
                estimates[(scheme_label(scheme), "ssf")] = _flatten_fit(fit, perm)
                traces[(scheme_label(scheme), "ssf")] = fit.loglik_trace
        if "bcrw" in config.estimators:
            em = EmConfig(K=K, seed=child_seed(config.seed, STREAM_REPLICATE, i, 200),
                          n_short_runs=config.n_short_runs,
                          short_iters=config.short_iters,
                          long_max_iters=config.long_max_iters, tol=config.tol)
            fit = fit_bcrw(sim.trajectory, config.scenario.targets, em)
            estimates[("direct", "bcrw")] = _flatten_fit(fit, perm)
            traces[("direct", "bcrw")] = fit.loglik_trace
        return ReplicateResult(index=i, estimates=estimates, loglik_traces=traces,
                               truncated=sim.truncated)
    except Exception as exc:  # noqa: BLE001 - failed replicates are excluded, never retried
        return ReplicateResult(index=i, estimates={}, loglik_traces={}, error=repr(exc))


def run_study(config: StudyConfig, collect_traces: bool = False):
    """Run all replicates (optionally in parallel) and summarize.

    Returns a StudyReport; with ``collect_traces`` also the per-replicate
    EM log-likelihood traces (for monotonicity audits).
    """
    perm = _truth_alignment(config.scenario)
    results = Parallel(n_jobs=config.n_jobs)(
        delayed(_run_replicate)(config, i, perm) for i in range(config.N))

    K = config.scenario.hmm.n_states
    formula = movement_formula([f"target{j}" for j in range(len(config.scenario.targets))])
    params = parameter_names(K, formula.names)
    truth = true_parameter_vector(config.scenario)

    cells: dict = {}
    errors = []
    n_failed = 0
    for res in results:
        if res.error is not None:
            n_failed += 1
            errors.append((res.index, res.error))
            continue
        for cell, vec in res.estimates.items():
            cells.setdefault(cell, []).append(vec)
    report = StudyReport(
        parameters=params, truth=truth,
        estimates={cell: np.array(v) for cell, v in cells.items()},
        n_failed=n_failed, n_total=config.N, errors=errors)
    if collect_traces:
        traces = [res.loglik_traces for res in results if res.error is None]
        return report, traces
    return report


# ---------------------------------------------------------------------------
# Single-trajectory equivalence comparison


@dataclass
class EquivalenceReport:
    """Side-by-side estimates (with SEs) of the three fitting routes."""

    parameters: list[str]
    columns: list[str]
    estimates: np.ndarray  # (P, n_columns)
    std_errors: np.ndarray
    fits: dict = field(default_factory=dict)  # column -> FitResult

    def max_pairwise_gap_in_pooled_se(self) -> float:
        worst = 0.0
        for a in range(len(self.columns)):
            for b in range(a + 1, len(self.columns)):
                gap = np.abs(self.estimates[:, a] - self.estimates[:, b])
                pooled = np.sqrt(self.std_errors[:, a] ** 2 + self.std_errors[:, b] ** 2)
                worst = max(worst, float(np.nanmax(gap / pooled)))
        return worst

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            header = ["parameter"]
            for c in self.columns:
                header += [f"{c}.estimate", f"{c}.se"]
            w.writerow(header)
            for i, p in enumerate(self.parameters):
                row = [p]
                for j in range(len(self.columns)):
                    row += [repr(float(self.estimates[i, j])),
                            repr(float(self.std_errors[i, j]))]
                w.writerow(row)


def equivalence_report(traj: Trajectory, targets, J: int, K: int, seed: int = 0,
                       uniform_M: float | None = None,
                       eta_tilde=(0.0, 1.0),
                       n_short_runs: int = 10, short_iters: int = 10,
                       long_max_iters: int = 500, tol: float = 1e-8,
                       align_to_means=None) -> EquivalenceReport:
    """Fit one trajectory three ways and tabulate estimates side by side.

    Columns: direct random-walk fit, discrete-choice fit with uniform
    control distances, and discrete-choice fit with parametric control
    distances plus the natural-parameter correction.
    """
    targets = tuple(targets)
    formula = movement_formula([f"target{j}" for j in range(len(targets))])
    tdict = {f"target{j}": p for j, p in enumerate(targets)}
    if uniform_M is None:
        uniform_M = max(15.0, float(np.max(traj.distances)) * 1.001)

    def mk_config(sub: int) -> EmConfig:
        return EmConfig(K=K, seed=child_seed(seed, STREAM_REPLICATE, sub),
                        n_short_runs=n_short_runs, short_iters=short_iters,
                        long_max_iters=long_max_iters, tol=tol)

    fits = {}
    fits["bcrw_direct"] = fit_bcrw(traj, targets, mk_config(0), compute_se=True)
    sets_u = build_choice_sets(child_seed(seed, STREAM_REPLICATE, 1), traj,
                               UniformScheme(uniform_M), J, formula, targets=tdict)
    fits["ssf_uniform"] = em_fit(sets_u, mk_config(1), formula=formula, compute_se=True)
    sets_p = build_choice_sets(child_seed(seed, STREAM_REPLICATE, 2), traj,
                               ParametricScheme(tuple(eta_tilde)), J, formula, targets=tdict)
    fit_p = em_fit(sets_p, mk_config(2), formula=formula, compute_se=True)
    corrected = apply_bias_correction([sp.beta for sp in fit_p.state_params],
                                      formula, eta_tilde)
    for sp, b in zip(fit_p.state_params, corrected):
        sp.beta[:] = b
    fits["ssf_parametric_corrected"] = fit_p

    if align_to_means is not None:
        asc = np.argsort(np.asarray(align_to_means), kind="stable")
        perm = np.empty(len(asc), dtype=int)
        perm[asc] = np.arange(len(asc))
    else:
        perm = np.arange(K)

    params = parameter_names(K, formula.names)
    cols = list(fits)
    est = np.empty((len(params), len(cols)))
    ses = np.empty((len(params), len(cols)))
    for j, name in enumerate(cols):
        fit = fits[name]
        est[:, j] = _flatten_fit(fit, perm)
        se_vals = []
        if K > 1:
            tr_se = fit.std_errors["transition"][np.ix_(perm, perm)]
            for h in range(K):
                for k in range(K):
                    if k != h:
                        se_vals.append(tr_se[h, k])
        for s in range(K):
            se_vals.extend(fit.std_errors["state_params"][perm[s]])
        ses[:, j] = se_vals
    return EquivalenceReport(parameters=params, columns=cols, estimates=est,
                             std_errors=ses, fits=fits)
