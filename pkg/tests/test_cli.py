import json

import pytest

from qopf import cli

from conftest import CASE2_TEXT


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def write_config(tmp_path, case_file, **overrides):
    doc = {
        "case": str(case_file),
        "instances": 1,
        "models": ["qcqp"],
        "methods": ["eg"],
        "rcm_runs": 2,
        "classical_schedule": {"theta": [5e-3, 1.0], "phi": [5e-3, 1.0]},
        "classical_stop": {"max_iters": 1500, "theta_tol": 1e-9, "phi_tol": 1e-9},
        "stop": {"max_iters": 30},
        "primal_ansatz": {"row": 6, "layers": 1},
        "dual_ansatz": {"row": 2, "layers": 1},
    }
    doc.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return path


def test_prepare_reports_and_caches(tmp_path, case2_file, capsys):
    out_file = tmp_path / "prepared.json"
    code, out, _ = run_cli(capsys, "prepare", str(case2_file),
                           "--rcm-runs", "2", "--out", str(out_file))
    assert code == 0
    assert "N=2" in out and "M=15" in out
    doc = json.loads(out_file.read_text())
    assert doc["dim"] == 2 and len(doc["constraints"]) == 16
    assert "permutation" in doc


def test_permute_csv_row(case2_file, capsys):
    code, out, _ = run_cli(capsys, "permute", str(case2_file), "--rcm-runs", "2")
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0].startswith("case,n,edges")
    fields = lines[1].split(",")
    assert fields[1] == "2" and fields[2] == "1"


def test_xbm_stats(case2_file, capsys):
    code, out, _ = run_cli(capsys, "xbm-stats", str(case2_file), "--rcm-runs", "2")
    assert code == 0
    assert "union colors" in out
    assert "M0" in out


def test_bounds_command(tmp_path, case2_file, capsys):
    config = write_config(tmp_path, case2_file)
    code, out, _ = run_cli(capsys, "bounds", str(config), "--epsilon", "0.5")
    assert code == 0
    assert "L = " in out and "sigma^2" in out
    assert "T (iterations)" in out and "circuits/iteration" in out


def test_solve_and_report(tmp_path, case2_file, capsys):
    out_dir = tmp_path / "run"
    config = write_config(tmp_path, case2_file, out=str(out_dir))
    code, out, _ = run_cli(capsys, "solve", str(config))
    assert code == 0
    assert "QCQP-EG" in out
    assert (out_dir / "table1.csv").exists()
    code, out, _ = run_cli(capsys, "report", str(out_dir), "--format", "csv")
    assert code == 0
    assert out.startswith("model,")
    code, out, _ = run_cli(capsys, "report", str(out_dir), "--format", "json")
    assert code == 0
    assert json.loads(out)["summary"]


def test_fit_command(tmp_path, case2_file, capsys):
    config = write_config(tmp_path, case2_file)
    code, out, _ = run_cli(capsys, "fit", str(config), "--restarts", "1",
                           "--iters", "60")
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == "role,row,layers,mean_cost"
    assert any(line.startswith("primal,") for line in lines[1:])
    assert any(line.startswith("dual,") for line in lines[1:])


def test_validation_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.case"
    bad.write_text(CASE2_TEXT.replace("1 2 4.0 -8.0 1.0", "2 2 4.0 -8.0 1.0"))
    code, _, err = run_cli(capsys, "prepare", str(bad))
    assert code == 1
    assert "self-loop" in err


def test_io_exit_code(capsys):
    code, _, err = run_cli(capsys, "prepare", "no-such-file.case")
    assert code == 3
    assert "i/o error" in err


def test_divergence_exit_code(tmp_path, case2_file, capsys):
    config = write_config(
        tmp_path, case2_file,
        classical_schedule={"theta": [50.0, 1.0], "phi": [50.0, 1.0]},
        divergence_ceiling=1e6)
    code, _, err = run_cli(capsys, "solve", str(config))
    assert code == 2
    assert "divergence" in err
