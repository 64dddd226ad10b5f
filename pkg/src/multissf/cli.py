"""Command-line front end.

Every command is a pure function of (config file, seed, input files):
reruns with the same inputs are byte-identical. All randomness flows from
one root seed through named substreams. Exit codes: 0 ok, 2 bad config,
3 simulation error, 4 fit error, 5 study quality gate.
"""

from __future__ import annotations

import csv
import json
import os
import sys

import click
import jsonschema
import numpy as np

from . import __version__
from .bcrw import BcrwScenario, simulate_trajectory
from .controls import (CosPersistence, CosTarget, CovariateFormula,
                       LandcoverIndicator, LogDistance, NegDistance,
                       ParametricScheme, UniformScheme, apply_bias_correction,
                       build_choice_sets, movement_formula,
                       write_choice_sets_csv)
from .core import (HmmParams, Point, read_landscape, read_trajectory_csv,
                   write_states_csv, write_trajectory_csv)
from .distance import GammaParams
from .errors import ConfigError
from .hmm import EmConfig, decode_states, em_fit, emissions, filter_smooth
from .rng import STREAM_SIMULATE, child_rng, child_seed
from .study import StudyConfig, equivalence_report, run_study

EXIT_CONFIG = 2
EXIT_SIMULATION = 3
EXIT_FIT = 4
EXIT_STUDY_QUALITY = 5

_point = {"type": "object", "properties": {"x": {"type": "number"}, "y": {"type": "number"}},
          "required": ["x", "y"], "additionalProperties": False}

_scenario_schema = {
    "type": "object",
    "properties": {
        "transition": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
        "initial": {"type": "array", "items": {"type": "number"}},
        "kappas": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
        "gammas": {"type": "array", "items": {
            "type": "object",
            "properties": {"shape": {"type": "number"}, "scale": {"type": "number"}},
            "required": ["shape", "scale"], "additionalProperties": False}},
        "targets": {"type": "array", "items": _point},
        "start_region": {"type": "array", "items": {"type": "number"},
                         "minItems": 4, "maxItems": 4},
        "stop_radius": {"type": "number"},
        "max_steps": {"type": "integer"},
    },
    "required": ["transition", "initial", "kappas", "gammas", "targets"],
    "additionalProperties": False,
}

_sampling_schema = {
    "type": "object",
    "properties": {
        "variant": {"enum": ["uniform", "parametric"]},
        "M": {"type": "number"},
        "eta_tilde": {"type": "array", "items": {"type": "number"},
                      "minItems": 2, "maxItems": 2},
        "J": {"type": "integer", "minimum": 1},
    },
    "required": ["variant", "J"],
    "additionalProperties": False,
}

_formula_schema = {
    "type": "object",
    "properties": {
        "type": {"enum": ["movement", "terms"]},
        "targets": {"type": "object", "additionalProperties": _point},
        "terms": {"type": "array", "items": {
            "type": "object",
            "properties": {
                "term": {"enum": ["log_distance", "neg_distance", "cos_persistence",
                                  "cos_target", "landcover"]},
                "target": {"type": "string"},
                "code": {"type": "integer"},
                "label": {"type": "string"},
            },
            "required": ["term"], "additionalProperties": False}},
    },
    "required": ["type"],
    "additionalProperties": False,
}

_em_schema = {
    "type": "object",
    "properties": {
        "K": {"type": "integer", "minimum": 1},
        "n_short_runs": {"type": "integer", "minimum": 1},
        "short_iters": {"type": "integer", "minimum": 1},
        "long_max_iters": {"type": "integer", "minimum": 1},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "compute_se": {"type": "boolean"},
    },
    "required": ["K"],
    "additionalProperties": False,
}

_study_schema = {
    "type": "object",
    "properties": {
        "N": {"type": "integer", "minimum": 2},
        "J": {"type": "integer", "minimum": 1},
        "schemes": {"type": "array", "items": _sampling_schema},
        "estimators": {"type": "array", "items": {"enum": ["ssf", "bcrw"]}},
    },
    "required": ["N", "J", "schemes"],
    "additionalProperties": False,
}

_config_schema = {
    "type": "object",
    "properties": {
        "version": {"const": 1},
        "seed": {"type": "integer", "minimum": 0},
        "scenario": _scenario_schema,
        "sampling": _sampling_schema,
        "formula": _formula_schema,
        "em": _em_schema,
        "study": _study_schema,
        "equivalence": {
            "type": "object",
            "properties": {"J": {"type": "integer", "minimum": 1},
                           "uniform_M": {"type": "number"},
                           "eta_tilde": {"type": "array", "items": {"type": "number"},
                                         "minItems": 2, "maxItems": 2}},
            "required": ["J"],
            "additionalProperties": False,
        },
        "inputs": {
            "type": "object",
            "properties": {"trajectory": {"type": "string"},
                           "landscape": {"type": "string"},
                           "fit": {"type": "string"}},
            "additionalProperties": False,
        },
    },
    "required": ["version"],
    "additionalProperties": False,
}


def load_config(path: str, require: tuple[str, ...]) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
        jsonschema.validate(cfg, _config_schema)
    except (OSError, json.JSONDecodeError, jsonschema.ValidationError) as exc:
        raise ConfigError(str(exc)) from None
    for block in require:
        if block not in cfg:
            raise ConfigError(f"command requires a {block!r} block")
    return cfg


def parse_scenario(block: dict) -> BcrwScenario:
    return BcrwScenario(
        hmm=HmmParams(transition=np.array(block["transition"]),
                      initial=np.array(block["initial"])),
        kappas=np.array(block["kappas"]),
        gammas=tuple(GammaParams(g["shape"], g["scale"]) for g in block["gammas"]),
        targets=tuple(Point(p["x"], p["y"]) for p in block["targets"]),
        start_region=tuple(block.get("start_region", (0.0, 10.0, 0.0, 10.0))),
        stop_radius=block.get("stop_radius", 30.0),
        max_steps=block.get("max_steps", 5000),
    )


def parse_scheme(block: dict):
    if block["variant"] == "uniform":
        if "M" not in block:
            raise ConfigError("uniform sampling requires M")
        return UniformScheme(M=block["M"])
    if "eta_tilde" not in block:
        raise ConfigError("parametric sampling requires eta_tilde")
    return ParametricScheme(eta_tilde=tuple(block["eta_tilde"]))


def parse_formula(block: dict):
    """Returns (formula, named targets or None)."""
    targets = None
    if "targets" in block:
        targets = {n: Point(p["x"], p["y"]) for n, p in block["targets"].items()}
    if block["type"] == "movement":
        names = sorted(targets) if targets else []
        return movement_formula(names), targets
    terms = []
    for t in block.get("terms", []):
        kind = t["term"]
        if kind == "log_distance":
            terms.append(LogDistance())
        elif kind == "neg_distance":
            terms.append(NegDistance())
        elif kind == "cos_persistence":
            terms.append(CosPersistence())
        elif kind == "cos_target":
            if "target" not in t:
                raise ConfigError("cos_target term requires a target name")
            terms.append(CosTarget(t["target"]))
        else:
            if "code" not in t:
                raise ConfigError("landcover term requires a class code")
            terms.append(LandcoverIndicator(code=t["code"], label=t.get("label", "")))
    if not terms:
        raise ConfigError("formula type 'terms' requires a nonempty term list")
    return CovariateFormula(tuple(terms)), targets


def parse_em(block: dict, seed: int) -> EmConfig:
    return EmConfig(K=block["K"],
                    n_short_runs=block.get("n_short_runs", 20),
                    short_iters=block.get("short_iters", 10),
                    long_max_iters=block.get("long_max_iters", 500),
                    tol=block.get("tol", 1e-8),
                    seed=seed)


def write_manifest(out: str, command: str, cfg: dict, seed: int, extra=None) -> None:
    manifest = {"command": command, "package_version": __version__,
                "seed": seed, "config": cfg}
    if extra:
        manifest.update(extra)
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _fit_to_json(fit, names):
    K = len(fit.state_params)
    se = fit.std_errors or {}
    out = {
        "n_states": K,
        "covariates": names,
        "state_params": [
            {names[i]: float(v) for i, v in enumerate(sp.beta)}
            for sp in fit.state_params
        ],
        "transition": fit.hmm.transition.tolist(),
        "initial": fit.hmm.initial.tolist(),
        "loglik": fit.loglik,
        "n_em_iterations": fit.n_em_iterations,
        "converged": fit.converged,
    }
    if se:
        out["std_errors"] = {
            "state_params": [
                {names[i]: float(v) for i, v in enumerate(arr)}
                for arr in se["state_params"]
            ],
            "transition": np.asarray(se["transition"]).tolist(),
            "not_positive_definite": se["not_positive_definite"],
        }
    return out


def _write_smoothed_csv(path, smooth_probs, decoded) -> None:
    K = smooth_probs.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"p_state{k + 1}" for k in range(K)] + ["decoded"])
        for t in range(smooth_probs.shape[0]):
            w.writerow([t + 1, *[repr(float(p)) for p in smooth_probs[t]],
                        int(decoded[t]) + 1])


@click.group()
def main():
    """Multi-state step-selection analysis: simulate, sample, fit, study."""


def common_options(f):
    f = click.option("--config", "config_path", required=True,
                     type=click.Path(exists=False), help="JSON run configuration")(f)
    f = click.option("--seed", type=int, default=None,
                     help="root seed (overrides the config)")(f)
    f = click.option("--out", "out_dir", required=True, type=click.Path(),
                     help="output directory")(f)
    f = click.option("--threads", type=int, default=1,
                     help="worker count; outputs do not depend on it")(f)
    return f


def _setup(config_path, seed, out_dir, require):
    cfg = load_config(config_path, require)
    root_seed = seed if seed is not None else cfg.get("seed", 0)
    os.makedirs(out_dir, exist_ok=True)
    return cfg, root_seed


@main.command()
@common_options
def simulate(config_path, seed, out_dir, threads):
    """Simulate one multi-state random-walk trajectory."""
    try:
        cfg, root_seed = _setup(config_path, seed, out_dir, ("scenario",))
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        scenario = parse_scenario(cfg["scenario"])
        sim = simulate_trajectory(child_rng(root_seed, STREAM_SIMULATE), scenario)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except Exception as exc:  # noqa: BLE001
        click.echo(f"simulation error: {exc}", err=True)
        sys.exit(EXIT_SIMULATION)
    write_trajectory_csv(os.path.join(out_dir, "trajectory.csv"), sim.trajectory)
    write_states_csv(os.path.join(out_dir, "true_states.csv"), sim.states)
    write_manifest(out_dir, "simulate", cfg, root_seed,
                   {"n_steps": sim.trajectory.n_steps, "truncated": sim.truncated})
    if sim.truncated:
        click.echo("warning: step cap reached before the target", err=True)
    click.echo(f"simulated {sim.trajectory.n_steps} steps -> {out_dir}")


def _load_choice_sets(cfg, root_seed):
    traj = read_trajectory_csv(cfg["inputs"]["trajectory"])
    landscape = None
    if "landscape" in cfg.get("inputs", {}):
        landscape = read_landscape(cfg["inputs"]["landscape"])
    formula, targets = parse_formula(cfg["formula"])
    scheme = parse_scheme(cfg["sampling"])
    sets = build_choice_sets(child_seed(root_seed, 0), traj, scheme,
                             cfg["sampling"]["J"], formula,
                             landscape=landscape, targets=targets)
    return traj, sets, formula, scheme


@main.command("sample-controls")
@common_options
def sample_controls_cmd(config_path, seed, out_dir, threads):
    """Sample control locations and write the choice-set interchange CSV."""
    try:
        cfg, root_seed = _setup(config_path, seed, out_dir,
                                ("inputs", "sampling", "formula"))
        _, sets, formula, _ = _load_choice_sets(cfg, root_seed)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    write_choice_sets_csv(os.path.join(out_dir, "choice_sets.csv"), sets, formula.names)
    write_manifest(out_dir, "sample-controls", cfg, root_seed,
                   {"n_choice_sets": len(sets)})
    click.echo(f"wrote {len(sets)} choice sets -> {out_dir}")


@main.command()
@common_options
def fit(config_path, seed, out_dir, threads):
    """Sample controls and fit the multi-state step-selection model."""
    try:
        cfg, root_seed = _setup(config_path, seed, out_dir,
                                ("inputs", "sampling", "formula", "em"))
        _, sets, formula, scheme = _load_choice_sets(cfg, root_seed)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    em = parse_em(cfg["em"], child_seed(root_seed, 1))
    try:
        result = em_fit(sets, em, formula=formula,
                        compute_se=cfg["em"].get("compute_se", False))
        corrected = False
        if isinstance(scheme, ParametricScheme) and formula.distance_indices():
            new = apply_bias_correction([sp.beta for sp in result.state_params],
                                        formula, scheme.eta_tilde)
            for sp, b in zip(result.state_params, new):
                sp.beta[:] = b
            corrected = True
    except Exception as exc:  # noqa: BLE001
        write_manifest(out_dir, "fit", cfg, root_seed, {"error": repr(exc)})
        click.echo(f"fit error: {exc}", err=True)
        sys.exit(EXIT_FIT)
    with open(os.path.join(out_dir, "fit.json"), "w") as fh:
        json.dump(_fit_to_json(result, formula.names), fh, indent=2)
    decoded = np.argmax(result.smooth_probs, axis=1)
    _write_smoothed_csv(os.path.join(out_dir, "smoothed.csv"),
                        result.smooth_probs, decoded)
    write_manifest(out_dir, "fit", cfg, root_seed,
                   {"scheme": cfg["sampling"], "J": cfg["sampling"]["J"],
                    "bias_corrected": corrected, "loglik": result.loglik})
    click.echo(f"fit loglik={result.loglik:.4f} -> {out_dir}")


@main.command()
@common_options
def decode(config_path, seed, out_dir, threads):
    """Recompute smoothed state probabilities from a stored fit."""
    try:
        cfg, root_seed = _setup(config_path, seed, out_dir,
                                ("inputs", "sampling", "formula"))
        if "fit" not in cfg["inputs"]:
            raise ConfigError("decode requires inputs.fit")
        _, sets, formula, _ = _load_choice_sets(cfg, root_seed)
        with open(cfg["inputs"]["fit"]) as fh:
            stored = json.load(fh)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except OSError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        betas = [np.array([sp[n] for n in stored["covariates"]])
                 for sp in stored["state_params"]]
        hmm = HmmParams(transition=np.array(stored["transition"]),
                        initial=np.array(stored["initial"]))
        bundle = filter_smooth(emissions(sets, betas), hmm)
        states, _ = decode_states(bundle)
    except Exception as exc:  # noqa: BLE001
        click.echo(f"fit error: {exc}", err=True)
        sys.exit(EXIT_FIT)
    _write_smoothed_csv(os.path.join(out_dir, "smoothed.csv"), bundle.smoothed, states)
    write_manifest(out_dir, "decode", cfg, root_seed, {"loglik": bundle.loglik})
    click.echo(f"decoded {len(states)} steps -> {out_dir}")


@main.command()
@common_options
def study(config_path, seed, out_dir, threads):
    """Run the replicate-level bias/Sd simulation study."""
    try:
        cfg, root_seed = _setup(config_path, seed, out_dir, ("scenario", "study"))
        scenario = parse_scenario(cfg["scenario"])
        schemes = tuple(parse_scheme(s) for s in cfg["study"]["schemes"])
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    em = cfg.get("em", {})
    config = StudyConfig(
        scenario=scenario, N=cfg["study"]["N"], J=cfg["study"]["J"],
        schemes=schemes,
        estimators=tuple(cfg["study"].get("estimators", ["ssf"])),
        seed=root_seed, n_jobs=threads,
        n_short_runs=em.get("n_short_runs", 20),
        short_iters=em.get("short_iters", 10),
        long_max_iters=em.get("long_max_iters", 500),
        tol=em.get("tol", 1e-8))
    report = run_study(config)
    report.write_csv(os.path.join(out_dir, "study.csv"))
    report.write_json(os.path.join(out_dir, "study.json"))
    write_manifest(out_dir, "study", cfg, root_seed,
                   {"n_failed": report.n_failed, "n_total": report.n_total})
    click.echo(f"study done: {report.n_total - report.n_failed}/{report.n_total} "
               f"replicates ok -> {out_dir}")
    if report.failure_fraction > 0.05:
        click.echo("error: more than 5% of replicates failed", err=True)
        sys.exit(EXIT_STUDY_QUALITY)


@main.command()
@common_options
def equivalence(config_path, seed, out_dir, threads):
    """Compare direct random-walk and discrete-choice fits on one trajectory."""
    try:
        cfg, root_seed = _setup(config_path, seed, out_dir,
                                ("scenario", "equivalence"))
        scenario = parse_scenario(cfg["scenario"])
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        if "inputs" in cfg and "trajectory" in cfg["inputs"]:
            traj = read_trajectory_csv(cfg["inputs"]["trajectory"])
        else:
            sim = simulate_trajectory(child_rng(root_seed, STREAM_SIMULATE), scenario)
            traj = sim.trajectory
    except Exception as exc:  # noqa: BLE001
        click.echo(f"simulation error: {exc}", err=True)
        sys.exit(EXIT_SIMULATION)
    eq = cfg["equivalence"]
    em = cfg.get("em", {})
    try:
        report = equivalence_report(
            traj, scenario.targets, J=eq["J"], K=scenario.hmm.n_states,
            seed=root_seed, uniform_M=eq.get("uniform_M"),
            eta_tilde=tuple(eq.get("eta_tilde", (0.0, 1.0))),
            n_short_runs=em.get("n_short_runs", 10),
            short_iters=em.get("short_iters", 10),
            long_max_iters=em.get("long_max_iters", 500),
            tol=em.get("tol", 1e-8),
            align_to_means=[g.mean for g in scenario.gammas])
    except Exception as exc:  # noqa: BLE001
        click.echo(f"fit error: {exc}", err=True)
        sys.exit(EXIT_FIT)
    report.write_csv(os.path.join(out_dir, "equivalence.csv"))
    write_manifest(out_dir, "equivalence", cfg, root_seed,
                   {"max_gap_in_pooled_se": report.max_pairwise_gap_in_pooled_se()})
    click.echo(f"equivalence table -> {out_dir}")


if __name__ == "__main__":
    main()
