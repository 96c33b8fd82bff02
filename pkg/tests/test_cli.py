from __future__ import annotations

import math
import subprocess
import sys

import numpy as np

from twophase.cli import main, read_config
from twophase.fields import TwoPhaseGrid, TwoPhaseVectorField, load_field, save_field


def report(path) -> dict[str, str]:
    lines = (path / "report.txt").read_text().splitlines()
    return dict(line.split("=", 1) for line in lines)


def test_verify_residues(tmp_path):
    assert main(["verify-residues", "--out", str(tmp_path)], {}) == 0
    rep = report(tmp_path)
    assert rep["status"] == "pass"


def test_invariant_failure_exit_code(tmp_path):
    code = main(["solve-flat", "--out", str(tmp_path), "--grid", "16x65"], {"TWOPHASE_TOL__FLAT": "1e-30"})
    assert code == 2
    assert report(tmp_path)["status"] == "fail"


def test_solver_failure_exit_code(tmp_path, capsys):
    # an unreachable quadrature tolerance is a solver failure, not a failed invariant
    code = main(["verify-residues", "--out", str(tmp_path)], {"TWOPHASE_TOL__RESIDUE": "1e-30"})
    assert code == 3
    assert "quadrature" in capsys.readouterr().err


def test_bad_configuration_exit_code(tmp_path, capsys):
    assert main(["solve-flat", "--out", str(tmp_path), "--grid", "63x65"], {}) == 1
    assert main(["solve-flat", "--out", str(tmp_path), "--grid", "banana"], {}) == 1
    assert main(["solve-flat", "--out", str(tmp_path), "--lambda=-1,0"], {}) == 1
    assert main(["no-such-command"], {}) == 1
    err = capsys.readouterr().err
    assert "error:" in err


def test_zero_data_dump_is_zero(tmp_path):
    env = {"TWOPHASE_DATA": "zero"}
    assert main(["solve-flat", "--out", str(tmp_path), "--grid", "16x33"], env) == 0
    v = load_field(tmp_path / "v.dump")
    assert np.all(v.plus == 0) and np.all(v.minus == 0)
    assert float(report(tmp_path)["gauge_constant"]) == 0
    assert (tmp_path / "v_slice.csv").read_text().startswith("x_N,re_v,im_v\n")


def test_helmholtz_on_gradient_dump(tmp_path):
    g = TwoPhaseGrid(2, 32, 2 * math.pi, 22.0, 513)
    rho = (1.0, 3.0)

    def comps(r):
        return [
            lambda x, y: -np.sin(x) * np.exp(-y * y) / r,
            lambda x, y: -2 * y * np.cos(x) * np.exp(-y * y) / r,
        ]

    save_field(tmp_path / "grad.dump", TwoPhaseVectorField.from_functions(g, comps(rho[0]), comps(rho[1])))
    out = tmp_path / "out"
    env = {"TWOPHASE_DATA": str(tmp_path / "grad.dump")}
    assert main(["helmholtz", "--out", str(out), "--rho", "1,3"], env) == 0
    assert float(report(out)["p_norm"]) < 1e-10
    assert (out / "p.dump").exists()


def test_environment_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("grid = 16x65\n[tol]\nflat = 1e-30\n")
    assert read_config(cfg) == {"grid": "16x65", "tol.flat": "1e-30"}
    out = tmp_path / "a"
    # the config alone makes the error check fail; the environment restores it
    assert main(["solve-flat", "--config", str(cfg), "--out", str(out)], {}) == 2
    assert main(["solve-flat", "--config", str(cfg), "--out", str(out)], {"TWOPHASE_TOL__FLAT": "1"}) == 0
    # an explicit flag beats the environment
    env = {"TWOPHASE_DATA": "zero", "TWOPHASE_GRID": "bogus"}
    assert main(["solve-flat", "--out", str(out), "--grid", "16x33"], env) == 0


def test_bad_config_file(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("[unterminated\n")
    assert main(["verify-residues", "--config", str(cfg), "--out", str(tmp_path)], {}) == 1
    assert main(["verify-residues", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path)], {}) == 1


def test_reports_are_deterministic(tmp_path):
    args = ["solve-flat", "--grid", "16x65", "--lambda", "1,0.5", "--seed", "3"]
    assert main(args + ["--out", str(tmp_path / "a")], {}) == 0
    assert main(args + ["--out", str(tmp_path / "b")], {}) == 0
    assert (tmp_path / "a" / "report.txt").read_bytes() == (tmp_path / "b" / "report.txt").read_bytes()


def test_invariants_command(tmp_path):
    env = {"TWOPHASE_COMPACT__SAMPLES": "3"}
    assert main(["invariants", "--out", str(tmp_path)], env) == 0
    rep = report(tmp_path)
    assert float(rep["R_mean_rel_max"]) < 1e-8 and float(rep["G_mean_rel_max"]) < 1e-8
    assert rep["samples"] == "3"


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "twophase", "verify-symbols", "--out", str(tmp_path)],
        capture_output=True,
        text=True,
        check=False,
    )
    assert proc.returncode == 0, proc.stderr
    assert report(tmp_path)["richardson_consistent"] == "true"
