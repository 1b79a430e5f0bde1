import csv
import os
import shutil
import subprocess
import sys

import numpy as np
import pytest

from pmp_sweep.cli import main, read_trajectory, write_trajectory
from pmp_sweep.registry import registry_names


def _file(problems_dir, name):
    return os.path.join(problems_dir, f"{name}.ocp")


def test_run_writes_trajectory(tmp_path, problems_dir, capsys):
    code = main(["run", _file(problems_dir, "double_integrator"), "--emit", "trajectory", "--out", str(tmp_path)])
    assert code == 0
    out = capsys.readouterr().out
    assert "converged   yes" in out and "(shooting)" in out
    header, data = read_trajectory(tmp_path / "trajectory.csv")
    assert header == ["t", "x1", "x2", "lambda1", "lambda2", "u1"]
    assert data.shape == (1001, 6)
    assert data[0, 5] == pytest.approx(3.0, abs=1e-5)
    assert data[-1, 1] == pytest.approx(1.0, abs=1e-6)


def test_trajectory_csv_round_trip_is_exact(tmp_path, solved):
    p, res = solved("harvest")
    path = tmp_path / "t.csv"
    write_trajectory(path, p, res.trajectory)
    _, data = read_trajectory(path)
    tr = res.trajectory
    assert np.array_equal(data, np.column_stack([tr.t, tr.x, tr.lam, tr.u]))


def test_emit_everything(tmp_path, capsys):
    code = main(
        ["run", "builtin:linear_growth", "--emit", "trajectory,kkt,phases,sigma", "--emit", "comparison",
         "--grid", "201", "--out", str(tmp_path)]
    )
    assert code == 0
    names = sorted(os.listdir(tmp_path))
    assert names == ["comparison.csv", "kkt.csv", "phases.csv", "trajectory.csv"]
    header, _ = read_trajectory(tmp_path / "trajectory.csv")
    assert header[-1] == "sigma1"
    with open(tmp_path / "phases.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["control", "t_start", "t_end", "activity"]
    assert [r[3] for r in rows[1:]] == ["upper", "interior"]
    with open(tmp_path / "kkt.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "activity1", "dH_du1", "residual1", "singular1"]
    # u(T) = 0 sits on the lower bound at the final node only
    assert [rows[1][1], rows[-2][1], rows[-1][1]] == ["upper", "interior", "lower"]
    with open(tmp_path / "comparison.csv") as fh:
        table = dict(list(csv.reader(fh))[1:])
    assert float(table["gap"]) >= -1e-7
    assert "comparison:" in capsys.readouterr().out


def test_lqr_gains(tmp_path):
    code = main(["run", "builtin:lqr_scalar", "--solver", "lqr", "--emit", "gains,trajectory", "--out", str(tmp_path)])
    assert code == 0
    header, data = read_trajectory(tmp_path / "gains.csv")
    assert header == ["t", "S11", "K11"]
    assert data[-1].tolist() == [1.0, 0.0, 0.0]
    assert data[0, 1] == pytest.approx(np.tanh(1.0), abs=1e-9)


def test_gains_need_lqr_solver(tmp_path, capsys):
    assert main(["run", "builtin:lqr_scalar", "--emit", "gains", "--out", str(tmp_path)]) == 1
    assert "needs --solver lqr" in capsys.readouterr().err


def test_lqr_solver_rejects_non_lqr_problem(capsys):
    assert main(["run", "builtin:harvest", "--solver", "lqr"]) == 1
    assert "error" in capsys.readouterr().err


def test_compare(capsys):
    assert main(["compare", "builtin:tracking_saturated"]) == 0
    out = capsys.readouterr().out
    gap = float(next(line.split()[1] for line in out.splitlines() if line.startswith("gap")))
    assert gap > 1e-3


def test_exit_codes(tmp_path, problems_dir, capsys):
    capped = tmp_path / "capped.ocp"
    with open(_file(problems_dir, "linear_growth")) as fh:
        capped.write_text(fh.read() + "\n[solver]\nmax_iter = 2\n")
    assert main(["run", str(capped)]) == 2
    assert main(["run", "builtin:linear_growth", "--grid", "101"]) == 0
    assert main(["run", str(tmp_path / "missing.ocp")]) == 1
    assert main(["run", "builtin:nonexistent"]) == 1
    assert main(["run", "builtin:linear_growth", "--set", "gamma=1"]) == 1
    assert main(["run", "builtin:linear_growth", "--set", "T"]) == 1
    assert main(["run", "builtin:linear_growth", "--damping", "3"]) == 1
    assert main(["run", "builtin:linear_growth", "--emit", "bogus"]) == 1
    assert main([]) == 1
    # several problems: the worst outcome wins
    assert main(["run", "builtin:linear_growth", str(capped), "--grid", "101", "--out", str(tmp_path)]) == 2
    capsys.readouterr()


def test_set_overrides_parameters(capsys):
    assert main(["run", "builtin:linear_growth", "--set", "T=6", "--grid", "201"]) == 0
    out = capsys.readouterr().out
    J = float(next(line.split()[1] for line in out.splitlines() if line.startswith("objective")))
    assert J == pytest.approx(94 / 3, abs=1e-3)


def test_list_builtins(capsys):
    assert main(["list-builtins"]) == 0
    out = capsys.readouterr().out
    for name in registry_names():
        assert name in out


def test_validate(tmp_path, problems_dir, capsys):
    files = [_file(problems_dir, n) for n in ("double_integrator", "isoperimetric")]
    assert main(["validate", *files]) == 0
    out = capsys.readouterr().out
    assert "fixed terminal states: ['x1']" in out
    assert "fixed terminal states: ['x', 'z']" in out
    empty = tmp_path / "empty.ocp"
    empty.write_text("")
    assert main(["validate", str(empty)]) == 1
    assert "missing [problem] section" in capsys.readouterr().err
    assert main(["validate", _file(problems_dir, "lqr_scalar"), "--solver", "lqr"]) == 0


def test_default_output_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("PMP_SWEEP_OUT", str(tmp_path / "env"))
    assert main(["run", "builtin:linear_growth", "--grid", "101", "--emit", "phases"]) == 0
    assert (tmp_path / "env" / "phases.csv").exists()


def test_batch_runs_in_separate_directories(tmp_path, capsys):
    code = main(
        ["run", "builtin:linear_growth", "builtin:harvest", "--batch", "2", "--grid", "201",
         "--emit", "trajectory", "--out", str(tmp_path)]
    )
    assert code == 0
    for name in ("linear_growth", "harvest"):
        assert (tmp_path / name / "trajectory.csv").exists()
    out = capsys.readouterr().out
    assert "== builtin:linear_growth" in out and "== builtin:harvest" in out


@pytest.mark.skipif(shutil.which("pmp-sweep") is None, reason="console script not installed")
def test_console_script(tmp_path):
    proc = subprocess.run(
        ["pmp-sweep", "run", "builtin:lqr_scalar", "--grid", "101"],
        capture_output=True, text=True, cwd=tmp_path, env={**os.environ, "PYTHONWARNINGS": "ignore"},
    )
    assert proc.returncode == 0, proc.stderr
    assert "converged   yes" in proc.stdout


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "pmp_sweep.cli", "list-builtins"], capture_output=True, text=True)
    assert proc.returncode == 0 and "harvest" in proc.stdout
