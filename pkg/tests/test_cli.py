import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from qcqpnet.cli import EXIT_INFEASIBLE, EXIT_INVALID, EXIT_NOT_CONVERGED, EXIT_OK, main
from qcqpnet.geometry import EllipsoidConstraint
from qcqpnet.linearizer import QcqpProblem


@pytest.fixture
def disk_json(tmp_path):
    path = tmp_path / "disk.json"
    QcqpProblem(np.eye(2), np.zeros(2), ellipsoids=[EllipsoidConstraint(np.eye(2), [2.0, 0.0], 1.0)]).to_json(path)
    return path


def test_gen_then_solve(tmp_path):
    prob = tmp_path / "p.json"
    assert main(["gen", "--n", "3", "--seed", "1", "--out", str(prob)]) == EXIT_OK
    p = QcqpProblem.from_json(prob)
    assert p.n == 3 and p.has_box
    out = tmp_path / "sol.json"
    assert main(["solve", str(prob), "--N", "256", "--exact", "--out", str(out)]) == EXIT_OK
    sol = json.loads(out.read_text())
    assert sol["status"] == "optimal" and len(sol["x"]) == 3
    m = sol["metrics"]
    assert m["N"] == 256 and m["sampler"] == "net"
    assert m["objective_approx"] <= m["objective_exact"] + 1e-6 * (1 + abs(m["objective_exact"]))


def test_gen_without_box_to_stdout(capsys):
    assert main(["gen", "--n", "2", "--no-box"]) == EXIT_OK
    d = json.loads(capsys.readouterr().out)
    assert d["l"] is None and d["u"] is None


def test_solve_default_n_points_and_trace(disk_json, tmp_path, capsys):
    trace = tmp_path / "trace.csv"
    assert main(["solve", str(disk_json), "--trace", str(trace), "--sampler", "uniform-cube", "--seed", "4"]) == EXIT_OK
    sol = json.loads(capsys.readouterr().out)
    assert sol["metrics"]["N"] == 1024
    assert abs(sol["objective"] - 1.0) <= 1e-3
    with open(trace) as fh:
        assert next(csv.reader(fh))[:3] == ["iteration", "rho", "merit"]


def test_solve_iteration_limit_exit_code(tmp_path):
    prob = tmp_path / "p.json"
    main(["gen", "--n", "4", "--out", str(prob)])
    code = main(["solve", str(prob), "--N", "64", "--max-iter", "1", "--out", str(tmp_path / "s.json")])
    assert code == EXIT_NOT_CONVERGED
    assert json.loads((tmp_path / "s.json").read_text())["status"] == "max_iter"


def test_oracle_methods(disk_json, tmp_path):
    for method in ("auto", "bisection", "grid"):
        out = tmp_path / f"{method}.json"
        assert main(["oracle", str(disk_json), "--method", method, "--levels", "3", "--out", str(out)]) == EXIT_OK
        sol = json.loads(out.read_text())
        assert abs(sol["objective"] - 1.0) <= 1e-6
        np.testing.assert_allclose(sol["x"], [1.0, 0.0], atol=1e-3)


def test_oracle_infeasible_exit_code(tmp_path):
    path = tmp_path / "inf.json"
    e = EllipsoidConstraint(np.eye(2), np.zeros(2), 1.0)
    QcqpProblem(np.eye(2), np.zeros(2), C=[[1.0, 0.0]], c=[2.0], ellipsoids=[e]).to_json(path)
    assert main(["oracle", str(path), "--method", "bisection"]) == EXIT_INFEASIBLE


def test_oracle_without_applicable_method_is_invalid(tmp_path):
    path = tmp_path / "big.json"
    main(["gen", "--n", "5", "--out", str(path)])
    assert main(["oracle", str(path), "--method", "grid"]) == EXIT_INVALID


def test_infeasible_qp_exit_code(tmp_path):
    # the equality line misses the ellipsoid, so the tangent cuts cannot all hold
    path = tmp_path / "inf.json"
    e = EllipsoidConstraint(np.eye(2), np.zeros(2), 1.0)
    QcqpProblem(np.eye(2), np.zeros(2), C=[[1.0, 0.0]], c=[2.0], ellipsoids=[e]).to_json(path)
    assert main(["solve", str(path), "--N", "64"]) == EXIT_INFEASIBLE


def test_sweep(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"dims": [2], "samplers": ["net"], "N_values": [16, 32], "n_seeds": 2}))
    out = tmp_path / "out.csv"
    assert main(["sweep", str(cfg), "--out", str(out)]) == EXIT_OK
    assert capsys.readouterr().out.strip() == str(out)
    with open(out) as fh:
        assert len(list(csv.DictReader(fh))) == 4


def test_points(tmp_path):
    prefix = tmp_path / "pts"
    assert main(["points", "--n", "3", "--N", "64", "--out", str(prefix)]) == EXIT_OK
    cube = np.loadtxt(f"{prefix}_cube.csv", delimiter=",", skiprows=1)
    sphere = np.loadtxt(f"{prefix}_sphere.csv", delimiter=",", skiprows=1)
    ell = np.loadtxt(f"{prefix}_ellipsoid.csv", delimiter=",", skiprows=1)
    assert cube.shape == (64, 2) and sphere.shape == ell.shape == (64, 3)
    np.testing.assert_allclose(np.linalg.norm(sphere, axis=1), 1.0, atol=1e-12)


def test_points_uniform_sphere_has_no_cube_file(tmp_path):
    prefix = tmp_path / "u"
    assert main(["points", "--N", "10", "--sampler", "uniform-sphere", "--out", str(prefix)]) == EXIT_OK
    assert not (tmp_path / "u_cube.csv").exists()
    assert (tmp_path / "u_ellipsoid.csv").exists()


@pytest.mark.parametrize(
    "argv",
    [
        ["solve", "missing.json"],
        ["gen", "--n", "1"],
        ["points", "--N", "100", "--sampler", "net"],
        ["solve", "{bad}", "--N", "100"],
    ],
)
def test_invalid_input_exit_code(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "{bad}").write_text("not json")
    assert main(argv) == EXIT_INVALID


def test_non_power_of_two_net_is_invalid(disk_json):
    assert main(["solve", str(disk_json), "--N", "100"]) == EXIT_INVALID


def test_argparse_errors_exit_with_usage():
    with pytest.raises(SystemExit) as exc:
        main(["solve"])
    assert exc.value.code == 2


def test_module_entry_point(disk_json):
    proc = subprocess.run(
        [sys.executable, "-m", "qcqpnet", "solve", str(disk_json), "--N", "64"],
        capture_output=True,
        text=True,
        check=False,
    )
    assert proc.returncode == EXIT_OK
    assert json.loads(proc.stdout)["status"] == "optimal"
