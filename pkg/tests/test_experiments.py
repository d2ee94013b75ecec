import json
import math

import numpy as np
import pytest

from thermobeam import ModelParams, energy, make_basis, state_norm
from thermobeam.cli import main
from thermobeam.experiments import (
    EXIT_BLOWUP,
    EXIT_OK,
    EXIT_PILOT,
    EXIT_USAGE,
    ConfigError,
    ExperimentConfig,
    draw_ball,
    draw_ensemble,
    parse_config_text,
    run_parallel,
    scale_to_energy,
    sample_profile,
)

SMALL = ["--set", "model.modes=8"]


def _csv(path):
    return np.genfromtxt(path, delimiter=",", names=True, comments="#")


# configuration ------------------------------------------------------------

def test_config_defaults_and_overrides():
    cfg = parse_config_text("model.beta = -3  # comment\n\nforcing.f.base = 1:1.0, 3:0.5\n",
                            {"model.modes": "4"})
    assert cfg.beta == -3.0 and cfg.modes == 4
    p = cfg.params()
    assert np.array_equal(p.forcing.f.at(0.0), [1.0, 0.0, 0.5, 0.0])
    assert p.alpha == 10.0
    assert cfg.radii == (1.0, 10.0, 100.0, 1000.0)


def test_config_resolved_text_round_trips():
    cfg = parse_config_text("model.beta = 2.5\nforcing.g.kind = sinusoidal\n"
                            "forcing.g.amp = 1:0.5\nforcing.g.freq = 1.0\nabsorb.radii = 1 5\n")
    again = parse_config_text(cfg.resolved_text())
    assert again == cfg


@pytest.mark.parametrize("text", [
    "model.beta 5",
    "model.nope = 1",
    "model.beta = five",
    "model.gamma = -1",
    "init.u = 40:1.0",
    "forcing.f.kind = square",
    "forcing.f.kind = tabulated",
    "integrator.dt = 0",
    "simulate.convergence = maybe",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        cfg = parse_config_text(text)
        cfg.initial_state()


def test_tabulated_forcing_from_file(tmp_path):
    table = tmp_path / "g.csv"
    table.write_text("0, 0.0, 1.0\n1, 2.0, 1.0\n")
    cfg = parse_config_text(f"model.modes = 3\nforcing.g.kind = tabulated\nforcing.g.table = {table}\n")
    assert np.allclose(cfg.params().forcing.g.at(0.5), [1.0, 1.0, 0.0])


# ensembles ----------------------------------------------------------------

def test_scale_to_energy_hits_target():
    b = make_basis(8)
    p = ModelParams(5.0, basis=b)
    z = scale_to_energy(sample_profile(np.random.default_rng(1), b), p, 50.0)
    assert energy(z, p) == pytest.approx(50.0, rel=1e-12)
    # below the quartic floor 1/4 beta^2 no multiple works
    assert scale_to_energy(sample_profile(np.random.default_rng(1), b), p, 1.0) is None


def test_ensemble_is_seed_determined():
    p = ModelParams(1.0, basis=make_basis(8))
    a = draw_ensemble(4, 7, p, 10.0)
    b = draw_ensemble(4, 7, p, 10.0)
    c = draw_ensemble(5, 7, p, 10.0)
    for x, y, w in zip(a, b, c):
        assert np.array_equal(x.stacked(), y.stacked())
        assert np.array_equal(x.stacked(), w.stacked())


def test_draw_ball_radius():
    b = make_basis(8)
    for z in draw_ball(10, 3, b, 2.0, gamma=0.5):
        assert 0 < state_norm(z, 0.5) <= 2.0 * (1 + 1e-12)


def test_run_parallel_preserves_order():
    assert run_parallel(lambda x: x * x, range(10), threads=3) == [x * x for x in range(10)]


# commands -----------------------------------------------------------------

def test_simulate_zero_data(tmp_path):
    out = tmp_path / "sim"
    code = main(["simulate", "--out", str(out), *SMALL, "--set", "model.beta=0",
                 "--set", "integrator.t_end=1"])
    assert code == EXIT_OK
    data = _csv(out / "trajectory.csv")
    assert len(data) == 11
    for name in data.dtype.names[1:]:
        assert np.all(data[name] == 0), name
    man = json.loads((out / "manifest.json").read_text())
    assert man["exit_code"] == 0 and "trajectory.csv" in man["outputs"]
    assert (out / "config.resolved.txt").exists()


def test_simulate_unforced_energy_limit(tmp_path):
    out = tmp_path / "sim"
    code = main(["simulate", "--out", str(out), *SMALL, "--set", "init.u=1:0.05, 2:0.01",
                 "--set", "init.v=1:0.1", "--set", "integrator.t_end=60",
                 "--set", "integrator.sample_dt=1"])
    assert code == EXIT_OK
    E = _csv(out / "trajectory.csv")["E"]
    assert abs(E[-1] - 6.25) < 1e-6


def test_simulate_convergence_summary(tmp_path):
    out = tmp_path / "sim"
    code = main(["simulate", "--out", str(out), "--set", "model.modes=4",
                 "--set", "forcing.f.base=1:1", "--set", "init.v=1:1, 2:0.2",
                 "--set", "integrator.t_end=2", "--set", "simulate.convergence=true"])
    assert code == EXIT_OK
    summary = dict(line.split() for line in (out / "summary.txt").read_text().splitlines())
    assert 3.5 <= float(summary["residual_ratio"]) <= 4.5


def test_simulate_blowup_exit_code(tmp_path):
    out = tmp_path / "sim"
    code = main(["simulate", "--out", str(out), *SMALL, "--set", "init.v=1:1",
                 "--set", "integrator.blowup_threshold=1e-3", "--set", "integrator.t_end=1"])
    assert code == EXIT_BLOWUP
    assert (out / "trajectory.csv").exists()
    assert json.loads((out / "manifest.json").read_text())["exit_code"] == EXIT_BLOWUP


def test_usage_errors(tmp_path, capsys):
    assert main(["simulate", "--set", "model.nope=1", "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["simulate", "--set", "oops", "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["simulate", "--config", str(tmp_path / "missing.cfg")]) == EXIT_USAGE
    assert main(["no-such-command"]) == EXIT_USAGE
    assert main([]) == EXIT_USAGE


def test_config_file_and_flags(tmp_path):
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text("model.modes = 4\nmodel.beta = 0\nintegrator.t_end = 0.5\n")
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(cfgfile), "--out", str(out), "--seed", "9",
                 "--threads", "2"]) == EXIT_OK
    echo = (out / "config.resolved.txt").read_text()
    assert "ensemble.seed = 9" in echo and "run.threads = 2" in echo and "model.modes = 4" in echo


def test_stationary_command(tmp_path):
    out = tmp_path / "st"
    beta = -5 * math.pi ** 2
    assert main(["stationary", "--out", str(out), *SMALL, "--set", f"model.beta={beta!r}"]) == 0
    lines = (out / "stationary.csv").read_text().splitlines()
    assert lines[0].startswith("branch,s,residual,c1,")
    assert len(lines) == 1 + 5


def test_decompose_zero_data(tmp_path):
    out = tmp_path / "dec"
    assert main(["decompose", "--out", str(out), *SMALL, "--set", "integrator.t_end=1"]) == 0
    data = _csv(out / "decompose.csv")
    for col in ("E0", "E1", "sum_defect"):
        assert np.all(data[col] == 0)


def test_backward_rejects_coincident_states(tmp_path):
    assert main(["backward-check", "--out", str(tmp_path), *SMALL]) == EXIT_USAGE


def test_backward_command(tmp_path):
    out = tmp_path / "bw"
    assert main(["backward-check", "--out", str(out), *SMALL, "--set", "init.u=1:0.01",
                 "--set", "integrator.t_end=1"]) == EXIT_OK
    data = _csv(out / "backward.csv")
    assert data.dtype.names == ("t", "Gamma", "slope", "k_hat")
    assert json.loads((out / "manifest.json").read_text())["slope_ok"]


def test_gronwall_linear_case(tmp_path, capsys):
    out = tmp_path / "gr"
    assert main(["gronwall-check", "--out", str(out), "--K", "0", "--Q", "0.5", "--eps0", "0.5",
                 "--lambda0", "10", "--horizon", "30"]) == EXIT_OK
    data = _csv(out / "gronwall.csv")
    np.testing.assert_allclose(data["Lambda"], data["closed_form"], rtol=1e-6)
    text = capsys.readouterr().out
    assert "closed_form_max_rel_error" in text and "satisfied" in text


def test_absorb_pilot_inconclusive(tmp_path):
    out = tmp_path / "ab"
    code = main(["absorb", "--out", str(out), *SMALL, "--set", "forcing.f.base=1:1",
                 "--set", "ensemble.size=1", "--set", "absorb.radii=100",
                 "--set", "absorb.pilot_time=0.5", "--set", "absorb.plateau_tol=1e-9"])
    assert code == EXIT_PILOT


def _absorb_args(out, threads):
    return ["absorb", "--out", str(out), *SMALL, "--threads", str(threads), "--seed", "4",
            "--set", "model.beta=1", "--set", "forcing.f.base=1:1",
            "--set", "ensemble.size=3", "--set", "absorb.radii=1, 10",
            "--set", "absorb.horizon=4", "--set", "absorb.pilot_time=30",
            "--set", "integrator.dt=2e-3"]


def test_absorb_deterministic_across_threads(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(_absorb_args(a, 1)) == EXIT_OK
    assert main(_absorb_args(b, 3)) == EXIT_OK
    assert (a / "absorb.csv").read_bytes() == (b / "absorb.csv").read_bytes()
    assert (a / "absorb.csv").read_text().startswith("# R0_emp")


def test_attract_heteroclinic_seeds(tmp_path):
    out = tmp_path / "at"
    beta = -2 * math.pi ** 2
    assert main(["attract", "--out", str(out), *SMALL, "--set", f"model.beta={beta!r}",
                 "--set", "attract.seeds=0.001, -0.001", "--set", "integrator.t_end=60",
                 "--set", "integrator.dt=1e-2"]) == EXIT_OK
    man = json.loads((out / "manifest.json").read_text())
    assert man["basins"] == {"-1->mode-1-minus": 1, "1->mode-1-plus": 1}


def test_gamma_sweep_command(tmp_path):
    out = tmp_path / "gs"
    assert main(["gamma-sweep", "--out", str(out), *SMALL, "--set", "forcing.f.base=1:1",
                 "--set", "init.u=1:0.2", "--set", "sweep.gammas=0.1, 0",
                 "--set", "integrator.t_end=8", "--set", "integrator.dt=2e-3"]) == EXIT_OK
    data = _csv(out / "gamma_sweep.csv")
    assert list(data["gamma"]) == [0.1, 0.0]
    assert data["distance_to_gamma0"][1] == 0.0
    assert json.loads((out / "manifest.json").read_text())["stationary_identical"]
