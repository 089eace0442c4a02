from __future__ import annotations

import json

import numpy as np
import pytest

from covkl.cli import main
from covkl.linalg import OrthonormalBasis, write_basis_csv, write_matrix_csv

SMALL = ["--set", "n=5", "--set", "nu_grid=3,8", "--set", "runs=2", "--set", "mc_samples=300"]


@pytest.fixture
def pair(tmp_path):
    c, xi = tmp_path / "c.csv", tmp_path / "xi.csv"
    write_matrix_csv(c, np.array([[2.0, 0.3], [0.3, 1.0]]))
    write_matrix_csv(xi, np.eye(2))
    return c, xi


def run_json(args, capsys):
    assert main(args) == 0
    return json.loads(capsys.readouterr().out)


def test_run_writes_csv_and_svg(tmp_path, capsys):
    code = main(["run", "--experiment", "fig1_right", "--seed", "42", "--out", str(tmp_path),
                 "--desk", "--plot", *SMALL])
    assert code == 0
    assert (tmp_path / "fig1_right.csv").exists() and (tmp_path / "fig1_right.svg").exists()


def test_run_is_deterministic(tmp_path):
    outs = []
    for k, workers in enumerate(("1", "4")):
        out = tmp_path / str(k)
        assert main(["run", "--experiment", "fig1_right", "--seed", "7", "--out", str(out),
                     "--workers", workers, *SMALL]) == 0
        outs.append((out / "fig1_right.csv").read_bytes())
    assert outs[0] == outs[1]


def test_config_file_and_dump(tmp_path, capsys):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("experiment = fig2_left\nn = 40\nruns = 3\n")
    assert main(["run", "--config", str(cfg), "--set", "runs=5", "--dump-config"]) == 0
    out = capsys.readouterr().out
    assert "n = 40" in out and "runs = 5" in out and "config_version = 1" in out


@pytest.mark.parametrize("args", [
    ["run", "--experiment", "fig1_right", "--set", "runs=0"],
    ["run", "--experiment", "nope"],
    ["run", "--set", "runs=2"],
    ["run", "--experiment", "fig1_right", "--config", "/nonexistent/file.cfg"],
    ["kl", "--kind", "t-mc", "--c", "x.csv", "--xi", "y.csv"],
    ["frobnicate"],
])
def test_config_errors_exit_2(args, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(args) == 2


def test_missing_nu_exit_2(pair):
    c, xi = pair
    assert main(["kl", "--kind", "t-mc", "--c", str(c), "--xi", str(xi)]) == 2


def test_numerical_failure_exit_3(tmp_path, pair):
    bad = tmp_path / "bad.csv"
    write_matrix_csv(bad, np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert main(["kl", "--kind", "gauss", "--c", str(bad), "--xi", str(pair[1])]) == 3
    assert main(["kl", "--kind", "asym", "--c", str(pair[0]), "--xi", str(pair[1]), "--nu", "2"]) == 3


def test_kl_kinds(pair, capsys):
    c, xi = pair
    gauss = run_json(["kl", "--kind", "gauss", "--c", str(c), "--xi", str(xi)], capsys)
    expected = 0.5 * (3.0 - 2.0 - np.log(2.0 - 0.09))
    assert gauss["mean"] == pytest.approx(expected, rel=1e-12)
    assert gauss["estimator_kind"] == "closed_form"
    mc = run_json(["kl", "--kind", "t-mc", "--c", str(c), "--xi", str(xi), "--nu", "1e6",
                   "--samples", "200000"], capsys)
    assert abs(mc["mean"] - expected) <= 3 * mc["std_error"]
    quad = run_json(["kl", "--kind", "t-quad", "--c", str(c), "--xi", str(xi), "--nu", "4",
                     "--grid-points", "401", "--half-width", "60"], capsys)
    assert quad["estimator_kind"] == "quadrature" and "tail_mass_bound" in quad
    asym = run_json(["kl", "--kind", "asym", "--c", str(c), "--xi", str(xi), "--nu", "5"], capsys)
    assert asym["kl_gauss_normalized"] == pytest.approx(expected / 2, rel=1e-12)
    h = run_json(["kl", "--kind", "h", "--c", str(c), "--xi", str(xi), "--h", "1e7"], capsys)
    assert h["kl_h"] == pytest.approx(expected / 2, abs=1e-6)


def test_oracle(tmp_path, pair, capsys):
    v = tmp_path / "v.csv"
    r = 1 / np.sqrt(2)
    write_basis_csv(v, OrthonormalBasis(np.array([[r, r], [r, -r]])))
    out = run_json(["oracle", "--c", str(pair[0]), "--v", str(v)], capsys)
    assert out["spectrum"] == pytest.approx([1.8, 1.2], rel=1e-12)
    assert out["trace"] == pytest.approx(3.0)
    assert out["kl_oracle_asym"] > 0


def test_module_entry_point():
    import subprocess
    import sys

    proc = subprocess.run([sys.executable, "-m", "covkl", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "run" in proc.stdout
