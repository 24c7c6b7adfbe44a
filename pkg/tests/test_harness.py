import io
import math
import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest

from scatter_cs.errors import ConfigError
from scatter_cs.harness import cli
from scatter_cs.harness.config import (ExperimentConfig, config_to_text, load_config, parse_config_text,
                                       parse_density)
from scatter_cs.harness.experiments import (DRIVERS, complex_noise, mc_coherence, mc_dt, mc_recovery,
                                            mc_stability, reciprocity_check, resonance_check, run_trials,
                                            write_csv)
from scatter_cs.harness.theory import OP_LIMIT, theory_bounds
from scatter_cs.scene import AngleDensity, Lattice, SphereDensity, delta_max
from scatter_cs.sensing import k_from_delta


def csv_text(result):
    buf = io.StringIO()
    write_csv(result, buf)
    return buf.getvalue()


def cfg_of(**kw):
    return replace(ExperimentConfig(), **kw).validate()


# config -------------------------------------------------------------------

def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[experiment]\nexperiment = mc-recovery\ntrials = 7  # comment\n"
                    "[lattice]\nside = 5\n[physics]\nomega = 10, 30, 100\n[target]\ns = 1 2 3\n")
    cfg = load_config(path, {"trials": "9", "seed": "0x10"})
    assert cfg.experiment == "mc-recovery" and cfg.trials == 9 and cfg.seed == 16
    assert cfg.side == 5 and cfg.m == 25
    assert cfg.omega == [10.0, 30.0, 100.0] and cfg.s == [1, 2, 3]


def test_config_text_round_trip():
    cfg = cfg_of(omega=[5.0, 7.5], s=[2], incident_density="bump:0.3:0.2:2", out="x.csv")
    assert load_config(None, parse_config_text(config_to_text(cfg))) == cfg


@pytest.mark.parametrize("text", [
    "[nope]\nx = 1\n",
    "[lattice]\nn = 3\n",
    "[lattice]\nside = abc\n",
    "[physics]\nomega = 10 5 20\n",
    "[physics]\nomega = -1\n",
    "[target]\ns = 0\n",
    "[sensors]\nincident_density = triangle\n",
    "[experiment]\nexperiment = mc-nothing\n",
    "[theory]\ndelta = 1.5\n",
    "not a config",
])
def test_config_errors(tmp_path, text):
    path = tmp_path / "bad.ini"
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_config(path)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.ini")


def test_parse_density():
    assert isinstance(parse_density("uniform"), AngleDensity)
    assert isinstance(parse_density("tilted:0.5", 3), SphereDensity)
    f = parse_density("uniform:-1:1")
    assert f.intervals[0] == (-1.0, 1.0)
    with pytest.raises(ConfigError):
        parse_density("tilted:0.5", 2)
    with pytest.raises(ConfigError):
        parse_density("bump:1")


# theory -------------------------------------------------------------------

def test_theory_spark3_example():
    rep = theory_bounds(cfg_of(), 1 / 3, 10.0, chi_i=0.0, chi_s=0.0)
    assert rep.spark3 == pytest.approx(2.0, abs=1e-15)


def test_theory_high_frequency_and_prediction():
    cfg = cfg_of(n=16, p=9)
    rep = theory_bounds(cfg, 0.2, 10.0, chi_i=0.0, chi_s=0.0)
    K = k_from_delta(cfg.m, cfg.delta)
    assert rep.K == K and rep.m2_holds
    assert rep.hf == pytest.approx(math.sqrt(16 * 9) / (4 * K * K), rel=1e-15)
    assert rep.mu_prediction == pytest.approx(2 * K * K / 12, rel=1e-14)
    assert rep.spark4 == pytest.approx(0.5 + rep.hf, rel=1e-14)


def test_theory_single_site_q_guard_and_op_constant():
    rep = theory_bounds(cfg_of(s=[1]), 0.2, 1.0, chi_i=0.1, chi_s=0.1)
    assert rep.q == math.inf and rep.tropp_probability == pytest.approx(1 - 2 * 0.05)
    rep3 = theory_bounds(cfg_of(s=[3]), 0.2, 1.0, chi_i=0.1, chi_s=0.1)
    # the q-term alone equals the limit, so the operator condition never holds
    first = rep3.op_lhs - 3 * 1.0 / (64 * 30)
    assert first == pytest.approx(OP_LIMIT, rel=1e-12)
    assert not rep3.op_holds and not rep.op_holds


def test_theory_is_pure():
    cfg = cfg_of()
    a = theory_bounds(cfg, 0.3, 12.0).as_dict()
    b = theory_bounds(cfg, 0.3, 12.0).as_dict()
    assert a == b
    assert a["norm_bound"] == 128.0 and a["norm_bound_holds"] == (144.0 <= 128.0)
    assert a["spectral_prob_exponent"] == 30 * 29


# drivers ------------------------------------------------------------------

def test_run_trials_ordered():
    assert run_trials(lambda t: t * t, range(20), threads=4) == [t * t for t in range(20)]


@pytest.mark.parametrize("experiment, kw", [
    ("mc-coherence", dict(trials=6, n=6, p=3, omega=[10.0, 30.0])),
    ("mc-recovery", dict(trials=6, n=10, p=1, model="exact", s=[1, 2], amplitude=0.01, side=4)),
    ("mc-stability", dict(trials=4, n=20, model="exact", s=[2], eps=[1e-3], amplitude=0.01, side=4)),
    ("mc-dt", dict(trials=4, n=10, side=4, omega=[2.0, 6.0], aperture=8.0)),
    ("reciprocity", dict(trials=6, side=4, s=[3], amplitude=0.1)),
])
def test_csv_identical_across_thread_counts(experiment, kw):
    cfg = cfg_of(experiment=experiment, seed=11, **kw)
    one = csv_text(DRIVERS[experiment](replace(cfg, threads=1)))
    many = csv_text(DRIVERS[experiment](replace(cfg, threads=4)))
    assert one == many
    assert one.startswith(f"# scatter-cs v1 {experiment}\n")
    assert csv_text(DRIVERS[experiment](replace(cfg, threads=1))) == one


def test_coherence_summary_is_ratio_of_flags():
    res = mc_coherence(cfg_of(trials=10, n=8, p=4, omega=[15.0]))
    flags = [r["pass"] for r in res.rows]
    assert res.summary[0]["pass_fraction"] == sum(flags) / len(flags)
    assert res.summary[0]["target"] == pytest.approx(0.81)


def test_mc_coherence_single_trial_reproducible():
    cfg = cfg_of(trials=1, n=5, p=5, seed=3)
    assert csv_text(mc_coherence(cfg)) == csv_text(mc_coherence(cfg))


def test_mc_recovery_rates():
    res = mc_recovery(cfg_of(experiment="mc-recovery", trials=10, side=5, n=4, p=4, s=[1, 25], omega=[20.0]))
    low, dense = res.summary
    assert low["bp_rate"] == 1.0 and low["omp_rate"] == 1.0
    assert dense["bp_rate"] <= 0.1
    kept = [r for r in res.rows if not r["skipped"] and r["s"] == 1]
    assert low["bp_rate"] == sum(r["bp_exact"] for r in kept) / len(kept)


def test_mc_stability_zero_noise_is_exact():
    res = mc_stability(cfg_of(experiment="mc-stability", trials=5, side=4, n=30, s=[2], eps=[0.0],
                              amplitude=0.01, model="exact"))
    for r in res.rows:
        assert r["skipped"] or (r["linf_err"] <= 1e-6 * 0.02 and r["contained"])


def test_mc_dt_columns():
    cfg = cfg_of(experiment="mc-dt", trials=3, side=4, n=10, omega=[2.0], aperture=8.0, delta_min=0.5)
    res = mc_dt(cfg)
    lat = Lattice(1.0, 4)
    assert res.rows[0]["delta_max"] == pytest.approx(delta_max(lat, 8.0, 0.5), rel=1e-15)
    res4 = mc_dt(replace(cfg, n=40))
    assert res4.rows[0]["noise_term"] == pytest.approx(res.rows[0]["noise_term"] / 2, rel=1e-14)


def test_reciprocity_and_resonance_drivers():
    rec = reciprocity_check(cfg_of(experiment="reciprocity", trials=5, side=4, s=[3], amplitude=0.1))
    assert rec.summary[0]["pass_fraction"] == 1.0
    res = resonance_check(cfg_of(experiment="resonance", side=2, amplitude=1.0))
    row = res.rows[0]
    assert row["distance_to_one"] <= 1e-6 and row["solver_raised"]


def test_complex_noise_norm():
    e = complex_noise(40, 1e-3, np.random.default_rng(0))
    assert np.linalg.norm(e) == pytest.approx(1e-3 * math.sqrt(40), rel=1e-14)
    assert np.all(complex_noise(5, 0.0, np.random.default_rng(0)) == 0)


# CLI ----------------------------------------------------------------------

def test_cli_experiment_writes_csv(tmp_path):
    out = tmp_path / "coh.csv"
    code = cli.main(["mc-coherence", "--trials", "3", "--set", "n=5", "--set", "p=2", "--out", str(out)])
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "# scatter-cs v1 mc-coherence"
    assert len([ln for ln in lines if not ln.startswith("#")]) == 4


def test_cli_config_error_exit_code(tmp_path, capsys):
    assert cli.main(["mc-coherence", "--set", "side=0"]) == 2
    assert cli.main(["mc-coherence", "--set", "bogus=1"]) == 2
    assert cli.main(["mc-coherence", "--config", str(tmp_path / "none.ini")]) == 2


def test_cli_numeric_failure_exit_code(tmp_path):
    # a tiny overdetermined l0 problem with no fitting support
    mat = tmp_path / "m.txt"
    mat.write_text("2 2 raw 1.0\n1.0 0.0 0.0 0.0\n1.0 0.0 0.0 0.0\n")
    data = tmp_path / "y.csv"
    data.write_text("index,re,im\n0,1.0,0.0\n1,-1.0,0.0\n")
    assert cli.main(["recover", "--matrix", str(mat), "--data", str(data), "--method", "bp"]) == 3


def test_cli_all_skipped_exit_code(tmp_path, monkeypatch):
    from scatter_cs.harness import experiments

    def skip_all(cfg):
        return experiments.ExperimentResult("reciprocity", ("trial", "skipped"),
                                            [{"trial": 0, "skipped": True}], [])

    monkeypatch.setitem(cli.DRIVERS, "reciprocity", skip_all)
    assert cli.main(["reciprocity", "--out", str(tmp_path / "r.csv")]) == 3


def test_cli_simulate_build_recover_round_trip(tmp_path):
    scene, data = tmp_path / "scene.txt", tmp_path / "y.csv"
    mat, xhat = tmp_path / "phi.txt", tmp_path / "x.csv"
    assert cli.main(["simulate", "--seed", "5", "--out", str(scene), "--data", str(data),
                     "--set", "side=4", "--set", "n=8", "--set", "p=4", "--set", "s=2"]) == 0
    assert cli.main(["build-matrix", "--scene", str(scene), "--omega", "20", "--out", str(mat)]) == 0
    assert cli.main(["recover", "--matrix", str(mat), "--data", str(data), "--method", "bp",
                     "--out", str(xhat)]) == 0
    from scatter_cs.scene import read_scene
    _, target, _ = read_scene(scene)
    d = np.loadtxt(xhat, delimiter=",", skiprows=1)
    x = d[:, 1] + 1j * d[:, 2]
    assert np.max(np.abs(x - target.nu)) <= 1e-6 * np.max(np.abs(target.nu))


def test_cli_theory_report(tmp_path):
    out = tmp_path / "t.txt"
    assert cli.main(["theory", "--set", "n=10", "--set", "p=2", "--set", "eps=0.001",
                     "--set", "amplitude=0.01", "--out", str(out)]) == 0
    text = out.read_text()
    assert "spark3 = " in text and "stability.b0 = " in text


def test_console_script_help():
    proc = subprocess.run([sys.executable, "-m", "scatter_cs.harness.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "mc-coherence" in proc.stdout
