import json

import numpy as np
import pytest

from permkern.cli import main, scan_table
from permkern.matrix import kernel_to_csv, kernel_to_json


@pytest.fixture
def files(tmp_path):
    rng = np.random.default_rng(0)
    A = rng.uniform(0.1, 2, (4, 4))
    sym = tmp_path / "sym.csv"
    sym.write_text(kernel_to_csv(A + A.T))
    bad = tmp_path / "bad.json"
    bad.write_text(kernel_to_json(np.array([[1.0, 1, 2], [1, 1, 1], [1, 1, 1]])))
    near = tmp_path / "near.csv"
    K = np.ones((3, 3))
    K[0, 1] = 1 + 5e-9
    near.write_text(kernel_to_csv(K))
    return {"sym": str(sym), "bad": str(bad), "near": str(near), "dir": tmp_path}


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_check(files, capsys):
    code, out, _ = run(capsys, "check", "--input", files["sym"])
    assert code == 0 and json.loads(out)["verdict"] == "symmetrizable"
    code, out, _ = run(capsys, "check", "--input", files["bad"])
    assert code == 0 and json.loads(out)["verdict"] == "not_symmetrizable"
    code, out, _ = run(capsys, "check", "--input", files["near"])
    assert code == 2 and json.loads(out)["verdict"] == "indeterminate"


def test_check_family_descriptor(capsys):
    fam = '{"family": "diag_plus_constant", "lam": [1, 2, 3], "d": 1, "f": [0.5, 1, 2]}'
    code, out, _ = run(capsys, "check", "--family", fam)
    assert code == 0 and json.loads(out)["verdict"] == "symmetrizable"


def test_errors(files, capsys):
    code, _, err = run(capsys, "check", "--input", str(files["dir"] / "missing.csv"))
    assert code == 1 and err.startswith("error:")
    code, _, err = run(capsys, "check")
    assert code == 1
    code, _, err = run(capsys, "construct", "--input", files["bad"])
    assert code == 1 and "symmetric" in err and "dominated" in err


def test_verify(files, capsys):
    code, out, _ = run(capsys, "verify", "--input", files["sym"], "--input", files["sym"])
    d = json.loads(out)
    assert code == 0 and d["pit_equivalent"] and d["necessary"]["all_ok"]


def test_scan_example(capsys, tmp_path):
    fam = '{"family":"exp_toeplitz_plus_f","lambda":1,"f":"monotone:k->2-exp(-k)"}'
    code, out, _ = run(capsys, "scan", "--family", fam)
    assert code == 0 and json.loads(out)["verdict"] == "not_asymptotically_symmetrizable"
    code, table, _ = run(capsys, "scan", "--family", fam, "--format", "table")
    assert table.startswith("verdict: not_asymptotically_symmetrizable")
    assert table == scan_table(json.loads(out))
    code, out, _ = run(capsys, "scan", "--family", '{"family":"dpc_tail_plus_f","n0":5,"f":"affine:1,0.5"}', "--schedule", "1,10")
    assert code == 0 and json.loads(out)["n0_candidate"] == 5


def test_construct_example(capsys, tmp_path):
    out_path = tmp_path / "h.json"
    code, _, _ = run(capsys, "construct", "--n", "30", "--seed", "7", "--output", str(out_path))
    d = json.loads(out_path.read_text())
    assert code == 0
    assert all(b["classification"] == "General" and abs(b["F_final_normalized"]) >= 1e-9 for b in d["block_log"])


def test_sample(files, capsys, tmp_path):
    K = tmp_path / "eye.csv"
    K.write_text(kernel_to_csv(np.eye(2)))
    grid = tmp_path / "y.csv"
    code, out, _ = run(capsys, "sample", "--input", str(K), "--alpha", "1/2", "--count", "20000", "--samples", str(grid))
    d = json.loads(out)
    assert code == 0 and d["sample_count"] == 20000 and len(d["exact"]) == 10
    assert np.loadtxt(grid, delimiter=",").shape == (20000, 2)
    code, out, _ = run(capsys, "sample", "--input", str(K), "--alpha", "1/3")
    assert code == 2 and json.loads(out)["empirical"] is None


def test_limitpoint(capsys):
    fam = '{"points": {"kind": "reciprocal", "count": 200000}, "u": "exp_abs", "tol": 1e-4, "n0_max": 10}'
    code, out, _ = run(capsys, "limitpoint", "--family", fam)
    d = json.loads(out)
    assert code == 0 and d["precondition_ok"] and len(d["rows"]) == 10
    code, out, _ = run(capsys, "limitpoint", "--family", '{"points": [0.5, 0.25, 0.125], "u": "min"}')
    assert code == 2


def test_byte_identical_across_runs_and_threads(capsys, monkeypatch, tmp_path):
    K = tmp_path / "w.csv"
    A = np.random.default_rng(3).standard_normal((3, 3))
    K.write_text(kernel_to_csv(A @ A.T))
    outs = []
    for threads in ("1", "3", "1"):
        monkeypatch.setenv("PERMKERN_THREADS", threads)
        outs.append(run(capsys, "sample", "--input", str(K), "--alpha", "3/2", "--count", "150000", "--seed", "5")[1])
        outs.append(run(capsys, "construct", "--n", "12", "--seed", "2")[1])
    assert outs[0] == outs[2] == outs[4]
    assert outs[1] == outs[3] == outs[5]
