import json
import math

import numpy as np
import pytest
from click.testing import CliRunner

from multissf.bcrw import simulate_choice_trajectory
from multissf.cli import main
from multissf.controls import (CosPersistence, CovariateFormula,
                               LandcoverIndicator, LogDistance, NegDistance)
from multissf.core import (LandscapeGrid, Point, write_landscape,
                           write_trajectory_csv)
from multissf.rng import child_rng

SCENARIO = {
    "transition": [[0.9, 0.1], [0.2, 0.8]],
    "initial": [0.5, 0.5],
    "kappas": [[20.0, 15.0], [10.0, -2.0]],
    "gammas": [{"shape": 5.0, "scale": 0.7}, {"shape": 1.0, "scale": 0.5}],
    "targets": [{"x": 200.0, "y": 200.0}],
    "stop_radius": 20.0,
}

EM_SMALL = {"K": 2, "n_short_runs": 3, "short_iters": 4, "long_max_iters": 120}


def write_config(path, **blocks):
    cfg = {"version": 1, **blocks}
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory, runner):
    out = tmp_path_factory.mktemp("sim")
    cfg = write_config(out / "cfg.json", seed=33, scenario=SCENARIO)
    res = runner.invoke(main, ["simulate", "--config", cfg, "--out", str(out)])
    assert res.exit_code == 0, res.output
    return out


def test_simulate_outputs(sim_dir):
    assert (sim_dir / "trajectory.csv").exists()
    assert (sim_dir / "true_states.csv").exists()
    manifest = json.loads((sim_dir / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert manifest["seed"] == 33
    assert manifest["n_steps"] > 20
    assert manifest["truncated"] is False
    header = (sim_dir / "trajectory.csv").read_text().splitlines()[0]
    assert header == "x,y"


def test_simulate_deterministic(tmp_path, runner, sim_dir):
    cfg = write_config(tmp_path / "cfg.json", seed=33, scenario=SCENARIO)
    res = runner.invoke(main, ["simulate", "--config", cfg, "--out", str(tmp_path)])
    assert res.exit_code == 0
    assert ((tmp_path / "trajectory.csv").read_text()
            == (sim_dir / "trajectory.csv").read_text())


def test_simulate_seed_flag_overrides(tmp_path, runner, sim_dir):
    cfg = write_config(tmp_path / "cfg.json", seed=33, scenario=SCENARIO)
    res = runner.invoke(main, ["simulate", "--config", cfg, "--seed", "44",
                               "--out", str(tmp_path)])
    assert res.exit_code == 0
    assert ((tmp_path / "trajectory.csv").read_text()
            != (sim_dir / "trajectory.csv").read_text())


def test_bad_config_exits_2(tmp_path, runner):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"version": 2}))
    res = runner.invoke(main, ["simulate", "--config", str(bad),
                               "--out", str(tmp_path)])
    assert res.exit_code == 2
    bad.write_text(json.dumps({"version": 1, "scenario": SCENARIO, "junk": 1}))
    res = runner.invoke(main, ["simulate", "--config", str(bad),
                               "--out", str(tmp_path)])
    assert res.exit_code == 2
    res = runner.invoke(main, ["fit", "--config", str(bad),
                               "--out", str(tmp_path)])
    assert res.exit_code == 2  # fit requires inputs/sampling/formula/em blocks
    res = runner.invoke(main, ["simulate", "--config", str(tmp_path / "nope.json"),
                               "--out", str(tmp_path)])
    assert res.exit_code == 2


def movement_blocks(sim_dir, J=30, M=15.0):
    return {
        "inputs": {"trajectory": str(sim_dir / "trajectory.csv")},
        "sampling": {"variant": "uniform", "M": M, "J": J},
        "formula": {"type": "movement",
                    "targets": {"goal": {"x": 200.0, "y": 200.0}}},
    }


def test_sample_controls(tmp_path, runner, sim_dir):
    cfg = write_config(tmp_path / "cfg.json", seed=1,
                       **movement_blocks(sim_dir, J=4))
    res = runner.invoke(main, ["sample-controls", "--config", cfg,
                               "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    lines = (tmp_path / "choice_sets.csv").read_text().splitlines()
    n_steps = len((sim_dir / "trajectory.csv").read_text().splitlines()) - 2
    assert len(lines) == 1 + (n_steps - 1) * 5
    assert lines[0].startswith("t,alt_id,is_case,angle,distance,log_dist")


@pytest.fixture(scope="module")
def fit_dir(tmp_path_factory, runner, sim_dir):
    out = tmp_path_factory.mktemp("fit")
    cfg = write_config(out / "cfg.json", seed=2, em=EM_SMALL,
                       **movement_blocks(sim_dir, J=50))
    res = runner.invoke(main, ["fit", "--config", cfg, "--out", str(out)])
    assert res.exit_code == 0, res.output
    return out


def test_fit_outputs(fit_dir):
    fit = json.loads((fit_dir / "fit.json").read_text())
    assert fit["n_states"] == 2
    assert fit["covariates"] == ["log_dist", "neg_dist", "cos_persist",
                                 "cos_target_goal"]
    assert len(fit["state_params"]) == 2
    assert fit["converged"] is True
    assert math.isfinite(fit["loglik"])
    rows = np.array(np.loadtxt(fit_dir / "smoothed.csv", delimiter=",",
                               skiprows=1))
    assert rows[0, 0] == 1  # time indices are 1-based
    assert np.allclose(rows[:, 1:3].sum(axis=1), 1.0, atol=1e-9)
    assert set(np.unique(rows[:, 3])) <= {1.0, 2.0}
    manifest = json.loads((fit_dir / "manifest.json").read_text())
    assert manifest["bias_corrected"] is False


def test_fit_with_se(tmp_path, runner, sim_dir):
    em = dict(EM_SMALL, compute_se=True)
    cfg = write_config(tmp_path / "cfg.json", seed=2, em=em,
                       **movement_blocks(sim_dir, J=50))
    res = runner.invoke(main, ["fit", "--config", cfg, "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    fit = json.loads((tmp_path / "fit.json").read_text())
    se = fit["std_errors"]
    assert len(se["state_params"]) == 2
    assert np.asarray(se["transition"]).shape == (2, 2)


def test_parametric_fit_is_bias_corrected(tmp_path, runner, sim_dir):
    blocks = movement_blocks(sim_dir, J=50)
    blocks["sampling"] = {"variant": "parametric", "eta_tilde": [0.0, 1.0], "J": 50}
    cfg = write_config(tmp_path / "cfg.json", seed=2, em=EM_SMALL, **blocks)
    res = runner.invoke(main, ["fit", "--config", cfg, "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["bias_corrected"] is True


def test_decode_reproduces_fit_smoothing(tmp_path, runner, sim_dir, fit_dir):
    blocks = movement_blocks(sim_dir, J=50)
    blocks["inputs"]["fit"] = str(fit_dir / "fit.json")
    cfg = write_config(tmp_path / "cfg.json", seed=2, **blocks)
    res = runner.invoke(main, ["decode", "--config", cfg, "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    assert ((tmp_path / "smoothed.csv").read_text()
            == (fit_dir / "smoothed.csv").read_text())


def test_study_command_and_thread_independence(tmp_path, runner):
    study = {"N": 2, "J": 10, "schemes": [{"variant": "uniform", "M": 15.0,
                                           "J": 10}]}
    em = {"K": 2, "n_short_runs": 2, "short_iters": 2, "long_max_iters": 20}
    out1, out2 = tmp_path / "a", tmp_path / "b"
    cfg = write_config(tmp_path / "cfg.json", seed=4, scenario=SCENARIO,
                       study=study, em=em)
    r1 = runner.invoke(main, ["study", "--config", cfg, "--out", str(out1),
                              "--threads", "1"])
    assert r1.exit_code == 0, r1.output
    r2 = runner.invoke(main, ["study", "--config", cfg, "--out", str(out2),
                              "--threads", "2"])
    assert r2.exit_code == 0, r2.output
    assert (out1 / "study.json").read_text() == (out2 / "study.json").read_text()
    lines = (out1 / "study.csv").read_text().splitlines()
    assert lines[0] == "parameter,scheme,estimator,bias,sd,n_ok"


def test_equivalence_command(tmp_path, runner):
    em = {"K": 2, "n_short_runs": 3, "short_iters": 4, "long_max_iters": 120}
    cfg = write_config(tmp_path / "cfg.json", seed=6, scenario=SCENARIO,
                       equivalence={"J": 60}, em=em)
    res = runner.invoke(main, ["equivalence", "--config", cfg,
                               "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    lines = (tmp_path / "equivalence.csv").read_text().splitlines()
    assert lines[0].split(",")[0] == "parameter"
    assert len(lines) == 11
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert math.isfinite(manifest["max_gap_in_pooled_se"])


def test_landcover_sign_recovery(tmp_path, runner):
    """Plant opposite land-cover preferences in the two states and check the
    fitted coefficients separate them with the right ordering."""
    rng = child_rng(99, 5)
    classes = (rng.uniform(size=(40, 40)) < 0.35).astype(int)  # 1 = meadow
    grid = LandscapeGrid(origin=Point(0.0, 0.0), cell_size=5.0, classes=classes,
                         legend={0: "other", 1: "meadow"})
    from multissf.core import HmmParams
    hmm = HmmParams(transition=[[0.9, 0.1], [0.2, 0.8]], initial=[0.5, 0.5])
    formula = CovariateFormula((LogDistance(), NegDistance(), CosPersistence(),
                                LandcoverIndicator(1, "meadow")))
    # state 0: long steps, weak meadow preference; state 1: short steps,
    # strong meadow preference
    betas = [np.array([4.0, 10.0 / 7.0, 3.0, 0.4]),
             np.array([0.0, 2.0, 1.0, 1.5])]
    sim = simulate_choice_trajectory(rng, hmm, betas, formula, grid,
                                     start=Point(100.0, 100.0), n_steps=400,
                                     proposal_M=6.0)
    write_trajectory_csv(tmp_path / "traj.csv", sim.trajectory)
    write_landscape(tmp_path / "land.json", grid)
    cfg = write_config(
        tmp_path / "cfg.json", seed=8,
        inputs={"trajectory": str(tmp_path / "traj.csv"),
                "landscape": str(tmp_path / "land.json")},
        sampling={"variant": "uniform", "M": 6.0, "J": 100},
        formula={"type": "terms", "terms": [
            {"term": "log_distance"}, {"term": "neg_distance"},
            {"term": "cos_persistence"},
            {"term": "landcover", "code": 1, "label": "meadow"}]},
        em={"K": 2, "n_short_runs": 4, "short_iters": 4, "long_max_iters": 200})
    res = runner.invoke(main, ["fit", "--config", cfg, "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    fit = json.loads((tmp_path / "fit.json").read_text())
    # fitted state 1 is the short-step state (planted strong preference)
    short, long_ = fit["state_params"]
    assert short["lc_meadow"] > 0.5
    assert long_["lc_meadow"] > -0.5
    assert short["lc_meadow"] > long_["lc_meadow"]
