import json
import subprocess
import sys

import numpy as np
import pytest

from wfcoupled.cli import run
from wfcoupled.model import model_to_dict

from conftest import four_locus, single_coupling


@pytest.fixture
def coupled(tmp_path):
    path = tmp_path / "pair.json"
    path.write_text(json.dumps(model_to_dict(single_coupling(1.0).spec)))
    return str(path)


@pytest.fixture
def star(tmp_path):
    path = tmp_path / "star.json"
    path.write_text(json.dumps(model_to_dict(four_locus(1.0, 2.0, 3.0, 0.0, 0.0, 0.0).spec)))
    return str(path)


def test_validate(coupled, capsys):
    assert run(["validate", coupled]) == 0
    assert capsys.readouterr().out.strip() == "valid: L=2 M=[2, 2] edges=1-2"


def test_invalid_model_exits_one(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"loci": [{"alleles": 2, "mutation": [0.0, 1.0]}]}))
    assert run(["validate", str(path)]) == 1
    err = capsys.readouterr().err
    assert "NonPositiveMutation" in err and len(err.strip().splitlines()) == 1


def test_usage_errors_exit_two(coupled, tmp_path):
    assert run([]) == 2
    assert run(["no-such-command", coupled]) == 2
    assert run(["simulate-chain", coupled]) == 2  # missing --n
    assert run(["simulate-sde", coupled, "--t-end", "1", "--init", "a,b"]) == 2
    assert run(["simulate-sde", coupled, "--t-end", "1", "--init", "0.1,0.2,0.3"]) == 2
    assert run(["validate", str(tmp_path / "missing.json")]) == 2


def test_assumption_error_exits_one(tmp_path, capsys):
    # mutation rates 3 + 3 exceed the per-generation mass available at N = 2
    path = tmp_path / "fast.json"
    path.write_text(json.dumps({"loci": [{"alleles": 2, "mutation": [3.0, 3.0]}]}))
    assert run(["simulate-chain", str(path), "--n", "2", "--generations", "1"]) == 1
    assert "PopulationTooSmall" in capsys.readouterr().err


def test_simulate_chain_is_byte_identical(coupled, tmp_path):
    outs = []
    for name in ("a.csv", "b.csv"):
        out = tmp_path / name
        args = ["simulate-chain", coupled, "--n", "1000", "--generations", "2000", "--seed", "7",
                "--thin", "100", "-o", str(out)]
        assert run(args) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    lines = outs[0].decode().splitlines()
    assert lines[0] == "t,x1_1,x1_2,x2_1,x2_2"
    assert len(lines) == 22
    out = tmp_path / "c.csv"
    run(["simulate-chain", coupled, "--n", "1000", "--generations", "2000", "--seed", "8",
         "--thin", "100", "-o", str(out)])
    assert out.read_bytes() != outs[0]


def test_simulate_sde_is_byte_identical(coupled, capsys):
    args = ["simulate-sde", coupled, "--t-end", "1", "--thin", "100", "--seed", "3", "--init", "0.2,0.8;0.7,0.3"]
    assert run(args) == 0
    first = capsys.readouterr()
    assert run(args) == 0
    assert capsys.readouterr().out == first.out
    assert "clamped steps" in first.err
    row = first.out.splitlines()[1].split(",")
    assert [float(v) for v in row] == [0.0, 0.2, 0.8, 0.7, 0.3]


def test_graph_export_star(star, capsys):
    assert run(["graph-export", star]) == 0
    out = capsys.readouterr().out
    edges = sorted(line.strip() for line in out.splitlines() if "--" in line)
    assert edges == ['"1" -- "2";', '"1" -- "3";', '"1" -- "4";']


def test_density_eval(coupled, capsys):
    assert run(["density-eval", coupled, "--points", "0.5,0.5|0.2,0.7"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "x1_1,x1_2,x2_1,x2_2,log_density"
    # u = 1 gives pi = x(1-x) y(1-y), and h = 1 adds 2 x y
    assert float(lines[1].split(",")[-1]) == pytest.approx(np.log(0.0625) + 0.5, rel=1e-14)
    assert float(lines[2].split(",")[-1]) == pytest.approx(np.log(0.2 * 0.8 * 0.7 * 0.3) + 0.28, rel=1e-14)
    assert run(["density-eval", coupled, "--points", "0.5,0.5", "--normalized"]) == 0
    val = float(capsys.readouterr().out.splitlines()[1].split(",")[-1])
    assert val == pytest.approx(np.log(0.0625) + 0.5 - np.log(0.0486320123663312784), rel=1e-12)


def test_density_eval_grid_file(coupled, tmp_path, capsys):
    grid = tmp_path / "grid.csv"
    grid.write_text("0.5,0.5\n0.25,0.75\n")
    assert run(["density-eval", coupled, "--grid", str(grid)]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 3
    assert run(["density-eval", coupled]) == 2


def test_normalize(coupled, capsys):
    assert run(["normalize", coupled]) == 0
    out = capsys.readouterr().out
    assert "method=closed" in out
    z = float(out.split()[0].split("=")[1])
    assert z == pytest.approx(0.0486320123663312784, rel=1e-13)
    assert run(["normalize", coupled, "--method", "mc", "--samples", "20000", "--seed", "4"]) == 0
    assert "se=" in capsys.readouterr().out


def test_flow_check(coupled, star, capsys):
    assert run(["flow-check", coupled]) == 0
    assert run(["flow-check", star, "--points", "5"]) == 0
    assert "ok" in capsys.readouterr().out


def test_moments_csv(coupled, capsys):
    assert run(["moments", coupled, "--x", "0.3,0.6", "--ns", "100,1000"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "N,quantity,exact,limit,abs_error"
    assert any(line.startswith("100,mu[1,1],") for line in lines)


def test_stationarity_json(coupled, tmp_path, capsys):
    traj = tmp_path / "t.csv"
    assert run(["simulate-sde", coupled, "--t-end", "200", "--thin", "100", "-o", str(traj)]) == 0
    capsys.readouterr()
    assert run(["stationarity", coupled, "--trajectory", str(traj), "--burn", "1", "--bins", "10"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["n"] == 2000 and rep["bins"] == 10
    assert {"tv", "ks", "ess", "tau_int", "corr_empirical", "corr_analytic"} <= set(rep)


def test_console_script_entry_point(coupled):
    res = subprocess.run([sys.executable, "-m", "wfcoupled.cli", "validate", coupled],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert res.stdout.startswith("valid:")
