import json
import subprocess
import sys

import pytest

from neumann_ocp.cli import DEFAULTS, ConfigError, default_tolerance, main, resolve
from neumann_ocp.domain import make_lshape


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_check_coercivity_exit_codes(capsys):
    code, out, _ = run(capsys, "check-coercivity", "--level", "3")
    assert code == 4 and "NON-COERCIVE (lambda_min < 0)" in out
    code, out, _ = run(capsys, "check-coercivity", "--level", "3", "--delta", "0", "--a0=1")
    assert code == 0 and "coercive (lambda_min > 0)" in out
    code, out, _ = run(capsys, "check-coercivity", "--level", "2", "--coercivity.indeterminate=100")
    assert code == 5 and "INDETERMINATE" in out


@pytest.mark.parametrize("argv", [
    ["study", "--mu", "1.5"],
    ["study", "--levels", "3..1"],
    ["study", "--levels", "2..2"],
    ["study", "--alpha", "-1.6"],
    ["study", "--nu", "0"],
    ["study", "--bogus=1"],
    ["study", "--solver.method=cholesky"],
    ["solve-ocp", "--ocp.u_min=1", "--ocp.u_max=0"],
    ["solve-ocp", "--domain=[[1,1],[2,1],[2,2],[1,2]]"],
    ["solve-ocp", "stray"],
    ["frobnicate"],
])
def test_config_errors_exit_one(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 1
    assert err


def test_numeric_failure_exit_two(capsys):
    code, _, err = run(capsys, "solve-ocp", "--level", "2", "--ocp.opt_tol=1e-30", "--ocp.max_iter=1")
    assert code == 2 and "numerical failure" in err


def test_solve_ocp_and_bvp(capsys, tmp_path):
    code, out, _ = run(capsys, "solve-ocp", "--level", "3", "--out", str(tmp_path))
    assert code == 0
    assert "err_u_L2G" in out and (tmp_path / "u_L3.txt").exists()
    code, out, _ = run(capsys, "solve-ocp", "--level", "3", "--ocp.u_max=0.1", "--ocp.u_min=-0.1")
    assert code == 0 and "active-set" in out
    code, out, _ = run(capsys, "solve-bvp", "--level", "2", "--out", str(tmp_path))
    assert code == 0 and "err_y_H1" in out
    assert (tmp_path / "K_L2.coo").exists() and (tmp_path / "phi_L2.txt").exists()


def test_mesh_command(capsys, tmp_path):
    code, out, _ = run(capsys, "mesh", "--mu", "0.5", "--levels", "1..4", "--out", str(tmp_path))
    assert code == 0
    report = json.loads((tmp_path / "mesh_report.json").read_text())
    assert [r["level"] for r in report] == [1, 2, 3, 4]
    assert all(r["violations"] == 0 and r["conformity"] == [] for r in report)
    assert any(tmp_path.glob("mesh_L4*"))


def test_study_csv_deterministic(capsys, tmp_path):
    for sub in ("a", "b"):
        code, _, _ = run(capsys, "study", "--levels", "1..3", "--quiet", "--out", str(tmp_path / sub))
        assert code == 0
    a = (tmp_path / "a" / "study.csv").read_bytes()
    assert a == (tmp_path / "b" / "study.csv").read_bytes()
    assert a.decode().splitlines()[0].startswith("level,h,ndof,err_y_L2")
    code, out, _ = run(capsys, "study", "--levels", "1..3", "--quiet")
    assert out.encode() == a


def test_study_assert(capsys):
    code, out, _ = run(capsys, "study", "--levels", "1..3", "--assert", "--tolerance.err_y_L2=1e-6")
    assert code == 3
    assert "FAIL err_y_L2" in out
    code, out, _ = run(capsys, "study", "--levels", "1..3", "--assert",
                       *[f"--tolerance.{k}=5" for k in DEFAULTS["tolerance"]])
    assert code == 0 and out.count("PASS") == 5


def test_config_file_and_overrides(tmp_path):
    f = tmp_path / "run.json"
    f.write_text(json.dumps({"mu": 0.5, "levels": "1..4", "nu": 2.0, "ocp": {"u_max": 0.3}}))
    _, cfg = resolve(["solve-ocp", "--config", str(f), "--ocp.u_max=0.2", "--level", "2"])
    assert cfg.domain.corners[0].mu == 0.5
    assert cfg.levels == (1, 4) and cfg.level == 2
    assert cfg.ocp.nu == 2.0 and cfg.ocp.u_max == 0.2
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        resolve(["study", "--config", str(bad)])
    with pytest.raises(ConfigError):
        resolve(["study", "--config", str(tmp_path / "missing.json")])


def test_per_corner_mu():
    _, cfg = resolve(["mesh", "--mu", "0.5,1,1,1,1,1"])
    assert [c.mu for c in cfg.domain.corners] == [0.5, 1, 1, 1, 1, 1]
    with pytest.raises(ConfigError):
        resolve(["mesh", "--mu", "0.5,1"])


def test_default_tolerances():
    assert default_tolerance(make_lshape())["err_y_L2"] == 0.12
    assert default_tolerance(make_lshape(0.5))["err_y_H1"] == 0.08
    assert default_tolerance(make_lshape(0.66))["err_y_L2"] == 0.2


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "neumann_ocp", "check-coercivity", "--level", "2"],
                         capture_output=True, text=True)
    assert out.returncode == 4
    out = subprocess.run([sys.executable, "-m", "neumann_ocp", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "check-coercivity" in out.stdout


def test_two_level_study_has_one_eoc_row(capsys):
    code, out, _ = run(capsys, "study", "--levels", "1..2", "--quiet")
    assert code == 0
    rows = [r.split(",") for r in out.splitlines() if not r.startswith(("level", "#"))]
    assert len(rows) == 2
    assert rows[0][4] == "" and rows[1][4] != ""
