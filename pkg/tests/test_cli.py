import csv
import subprocess
import sys
import time

import numpy as np
import pytest

from proxhmc import experiments as ex
from proxhmc.cli import main
from proxhmc.io import read_matrix, read_sidecar
from proxhmc.targets import SplitPotential


def _csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def _run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path)])


# --------------------------------------------------------------------- run

def test_run_toy_smoke(tmp_path, capsys):
    start = time.perf_counter()
    code = _run(tmp_path, "run", "--experiment", "toy", "--methods", "phmc", "--reps", "1",
                "--iters", "1000", "--threads", "1")
    assert code == 0
    assert time.perf_counter() - start < 5
    assert (tmp_path / "traces" / "phmc_rep000.bin").is_file()
    assert read_matrix(tmp_path / "traces" / "phmc_rep000.bin").shape == (1000, 1)
    rows = _csv(tmp_path / "summary_ess_per_sec.csv")
    assert [r["method"] for r in rows] == ["phmc"]
    side = read_sidecar(tmp_path / "summary_ess_per_sec.csv.json")
    assert side["seed"] == 0 and "code_version" in side
    assert "phmc" in capsys.readouterr().out


def test_every_output_has_sidecar(tmp_path):
    _run(tmp_path, "run", "--experiment", "toy", "--methods", "phmc,rwm", "--reps", "2",
         "--iters", "300", "--threads", "1")
    files = [p for p in tmp_path.rglob("*") if p.is_file() and p.suffix in (".csv", ".bin")]
    assert files
    for p in files:
        sidecar = p.with_suffix(".json") if p.parent.name == "traces" else p.with_name(p.name + ".json")
        assert sidecar.is_file(), p


def test_run_deterministic(tmp_path):
    args = ["run", "--experiment", "toy", "--methods", "phmc,pmala,rwm", "--reps", "2",
            "--iters", "400", "--threads", "1", "--seed", "7"]
    assert _run(tmp_path / "a", *args) == 0
    assert _run(tmp_path / "b", *args) == 0
    for name in ("phmc_rep000.bin", "phmc_rep001.bin", "pmala_rep001.bin", "rwm_rep000.bin"):
        assert (tmp_path / "a" / "traces" / name).read_bytes() == \
            (tmp_path / "b" / "traces" / name).read_bytes()
    assert (tmp_path / "a" / "summary_ess.csv").read_bytes() == \
        (tmp_path / "b" / "summary_ess.csv").read_bytes()


def test_run_lowrank_outputs(tmp_path):
    code = _run(tmp_path, "run", "--experiment", "lowrank", "--methods", "phmc", "--reps", "1",
                "--iters", "100", "--threads", "1", "--eps", "0.005")
    assert code == 0
    mask = np.loadtxt(tmp_path / "widest_mask_phmc.csv", delimiter=",")
    assert mask.shape == (64, 64) and mask.sum() == 205
    truth, obs = read_matrix(tmp_path / "truth.bin"), read_matrix(tmp_path / "observation.bin")
    assert truth.shape == obs.shape == (64, 64)


def test_missing_data_file(tmp_path, capsys):
    missing = tmp_path / "absent.csv"
    code = _run(tmp_path, "run", "--experiment", "logistic", "--data", str(missing),
                "--methods", "phmc", "--iters", "100", "--reps", "1")
    assert code != 0
    assert "absent.csv" in capsys.readouterr().err


def test_bad_method_and_experiment(tmp_path, capsys):
    assert _run(tmp_path, "run", "--methods", "nuts") != 0
    assert _run(tmp_path, "run", "--experiment", "mnist") != 0
    assert "error" in capsys.readouterr().err


def test_chain_errors_carry_context(monkeypatch):
    def boom(*a, **k):
        raise FloatingPointError("overflow")

    monkeypatch.setattr(ex.samplers, "run_chain", boom)
    cfg = ex.ExperimentConfig("toy", methods="rwm", n_iterations=100, reps=1, threads=1,
                              scale=0.1)
    with pytest.raises(ex.ExperimentError, match="toy/rwm/replication 0"):
        ex.run_experiment(cfg)


# -------------------------------------------------------------------- tune

def test_tune_toy(tmp_path, capsys):
    assert _run(tmp_path, "tune", "--experiment", "toy") == 0
    r = [float(row["R"]) for row in _csv(tmp_path / "lambda_sweep.csv")]
    assert len(r) == 40 and all(b >= a for a, b in zip(r, r[1:]))
    assert "chosen lambda_g" in capsys.readouterr().out


def test_tune_logistic_reports_reference(tmp_path, capsys):
    assert _run(tmp_path, "tune", "--experiment", "logistic") == 0
    out = capsys.readouterr().out
    assert "chosen lambda_g" in out and "reference value" in out and "0.01" in out


def test_tune_single_point_grid(tmp_path, capsys):
    assert _run(tmp_path, "tune", "--experiment", "toy", "--grid", "0.05") == 0
    assert "chosen lambda_g = 0.05" in capsys.readouterr().out


def test_tune_bad_grid(tmp_path):
    assert _run(tmp_path, "tune", "--grid", "1:2") == 2
    assert _run(tmp_path, "tune", "--grid", "0.1,0.01") == 2
    assert _run(tmp_path, "tune", "--grid", "0.05:0.05:1") == 2


# -------------------------------------------------------------- trajectory

def test_trajectory_row_counts(tmp_path):
    code = _run(tmp_path, "trajectory", "--lambda", "0.001,1", "--ns-lambda", "1",
                "--grid-size", "11")
    assert code == 0
    rows = _csv(tmp_path / "trajectory.csv")
    # 2 starts x (2 p-HMC + 1 ns-HMC) trajectories x (L + 1) rows
    assert len(rows) == 2 * 3 * 21
    assert len(_csv(tmp_path / "contour.csv")) == 121
    assert read_sidecar(tmp_path / "trajectory.csv.json")["settings"]["eps"] == 0.01


def test_trajectory_custom_starts(tmp_path):
    assert _run(tmp_path, "trajectory", "--starts", "0.5:1,1.5:-1,2:0", "--leapfrog", "5",
                "--lambda", "0.1", "--ns-lambda", "1", "--grid-size", "5") == 0
    assert {r["start"] for r in _csv(tmp_path / "trajectory.csv")} == {"0", "1", "2"}


def test_trajectory_needs_scalar_target(tmp_path, capsys):
    assert _run(tmp_path, "trajectory", "--experiment", "logistic") == 2
    assert "scalar" in capsys.readouterr().err


def test_trajectory_free_flight():
    free = SplitPotential(name="free", dimension=1, f_value=lambda x: 0.0,
                          f_gradient=lambda x: np.zeros_like(x), g_value=lambda x: 0.0,
                          g_prox=lambda x, lam: x, full_prox=lambda x, lam: x)
    rows = ex.toy_trajectories(free, [(0.0, 2.0)], eps=0.1, n_steps=4, lam_gs=[1.0],
                               ns_lams=[1.0])
    for method in ("phmc", "nshmc"):
        path = [r for r in rows if r["method"] == method]
        np.testing.assert_allclose([r["x"] for r in path], 0.2 * np.arange(5))
        assert all(r["p"] == 2.0 for r in path)


def test_trajectory_energy_ordering():
    pot, _ = ex.build_target(ex.ExperimentConfig("toy"))
    rows = ex.toy_trajectories(pot, ex.default_trajectory_starts(pot), lam_gs=[1e-3, 1.0],
                               ns_lams=[1.0])
    for s in (0, 1):
        ns = [abs(r["dH"]) for r in rows if r["method"] == "nshmc" and r["start"] == s]
        for lam in (1e-3, 1.0):
            ph = [abs(r["dH"]) for r in rows
                  if r["method"] == "phmc" and r["lam"] == lam and r["start"] == s]
            assert all(a < b for a, b in zip(ph[1:], ns[1:]))


# ------------------------------------------------------------------- audit

@pytest.mark.parametrize("experiment,expected", [
    ("toy", {"a": "pass", "b": "pass", "c": "pass", "d": "pass"}),
    ("logistic", {"a": "warn"}),
])
def test_audit(tmp_path, experiment, expected):
    assert _run(tmp_path, "audit", "--experiment", experiment) == 0
    table = {r["condition"]: r["verdict"] for r in _csv(tmp_path / "audit_table.csv")}
    for k, v in expected.items():
        assert table[k] == v
    assert (tmp_path / "audit_rays.csv.json").is_file()


# ------------------------------------------------------------------ config

def test_config_file_and_flag_priority(tmp_path):
    conf = tmp_path / "c.toml"
    conf.write_text('experiment = "toy"\nmethods = "rwm"\niters = 200\nreps = 1\nseed = 3\n'
                    'threads = 1\n')
    out = tmp_path / "o"
    assert main(["run", "--config", str(conf), "--iters", "150", "--out", str(out)]) == 0
    side = read_sidecar(out / "run.json")
    assert side["experiment"]["n_iterations"] == 150
    assert side["experiment"]["seed"] == 3 and side["experiment"]["methods"] == ["rwm"]
    assert read_matrix(out / "traces" / "rwm_rep000.bin").shape == (150, 1)


def test_config_must_be_flat(tmp_path, capsys):
    conf = tmp_path / "c.toml"
    conf.write_text("[run]\niters = 5\n")
    assert main(["run", "--config", str(conf)]) == 2
    assert "flat" in capsys.readouterr().err


def test_config_missing(tmp_path):
    assert main(["run", "--config", str(tmp_path / "none.toml")]) == 2


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "proxhmc", "--help"], capture_output=True,
                         text=True, check=True)
    for cmd in ("run", "tune", "trajectory", "audit"):
        assert cmd in out.stdout
