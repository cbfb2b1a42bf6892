import csv
import io
import json
import math
import os
import subprocess
import sys

import pytest

from betatails import cli
from betatails.experiments import extremal_values

TAIL = ["tail", "--ensemble", "hermite", "--side", "upper", "--n", "400", "--beta", "2",
        "--samples", "100000", "--seed", "1"]


def run(capsys, argv):
    code = cli.run(argv)
    out, err = capsys.readouterr()
    return code, out, err


def rows_of(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_tail_example(capsys):
    code, out, _ = run(capsys, TAIL + ["--eps", "0.1"])
    assert code == 0
    lines = out.splitlines()
    assert lines[0].split(",") == cli.TAIL_COLUMNS
    (row,) = rows_of(out)
    hits, n = int(row["hits"]), int(row["samples"])
    assert n == 100000 and float(row["p_hat"]) == hits / n
    assert 0 <= float(row["ci_low"]) <= float(row["p_hat"]) <= float(row["ci_high"]) <= 1
    assert row["kappa"] == "" and row["seed"] == "1"


def test_tail_rejects_eps_outside(capsys, caplog):
    code, out, _ = run(capsys, TAIL + ["--eps", "1.5"])
    assert code == 2 and out == ""
    assert "eps" in caplog.text


@pytest.mark.parametrize("argv", [
    ["tail", "--bogus"],
    TAIL + ["--eps", "0.1", "--frobnicate", "3"],
    ["nosuch"],
    [],
    ["verify", "everything"],
    ["variance", "--n-grid", "a,b", "--beta", "2", "--samples", "100"],
    ["tail", "--side", "upper", "--n", "10", "--beta", "2", "--samples", "10", "--eps", "0.1",
     "--seed", "-1"],
])
def test_usage_errors_exit_2(capsys, argv):
    code, out, err = run(capsys, argv)
    assert code == 2 and out == ""
    assert "usage" in err


def test_parameter_errors_exit_2(capsys):
    base = ["--side", "upper", "--n", "10", "--beta", "2", "--samples", "10"]
    assert run(capsys, ["tail", *base, "--eps", "0.1", "--kappa", "20"])[0] == 2
    assert run(capsys, ["tail", *base, "--ensemble", "laguerre", "--eps", "0.1"])[0] == 2
    assert run(capsys, ["tail", *base, "--eps", "0.1", "--beta", "0"])[0] == 2
    assert run(capsys, ["variance", "--n-grid", "16,16", "--beta", "2", "--samples", "200"])[0] == 2
    assert run(capsys, ["sample", "--ensemble", "laguerre", "--n", "5", "--beta", "2"])[0] == 2
    assert run(capsys, ["tail", *base, "--eps", "0.1", "--workers", "0"])[0] == 2


def test_verify_parts_example(capsys):
    code, out, _ = run(capsys, ["verify", "parts", "--trials", "10000", "--seed", "7",
                                "--format", "json"])
    assert code == 0
    doc = json.loads(out)
    assert doc["config"]["suite"] == "parts" and doc["config"]["seed"] == 7
    ident = [r for r in doc["results"] if r["count"] == 10000]
    assert ident and all(r["passed"] for r in doc["results"])
    assert max(r["max_abs_violation"] for r in doc["results"]) <= 1e-12


def test_verify_failure_exit_3(capsys, caplog, monkeypatch):
    def fake(name, trials=None, seed=7, samples=None):
        return {"suite": name, "passed": False, "seconds": 0.0,
                "checks": [{"name": "x", "count": 1, "max_violation": 1.0, "tolerance": 0.0,
                            "passed": False}]}
    monkeypatch.setattr(cli, "run_suite", fake)
    code, out, err = run(capsys, ["verify", "eigen"])
    assert code == 3
    assert rows_of(out)[0]["passed"] == "false"
    assert "check failed" in caplog.text


def test_json_shape_and_output_file(capsys, tmp_path):
    target = tmp_path / "t.json"
    argv = ["tail", "--side", "lower", "--n", "20", "--beta", "1", "--samples", "500",
            "--eps", "0.05", "0.2", "--format", "json", "-o", str(target)]
    code, out, _ = run(capsys, argv)
    assert code == 0 and out == ""
    doc = json.loads(target.read_text())
    assert set(doc) == {"config", "results"}
    assert "workers" not in doc["config"] and "output" not in doc["config"]
    assert [r["eps"] for r in doc["results"]] == [0.05, 0.2]
    assert list(doc["results"][0]) == cli.TAIL_COLUMNS
    assert doc["results"][0]["hits"] >= doc["results"][1]["hits"]


def test_csv_numbers_round_trip(capsys):
    code, out, _ = run(capsys, ["center", "--n-grid", "16,32", "--beta", "2", "--samples", "300"])
    assert code == 0
    js = run(capsys, ["center", "--n-grid", "16,32", "--beta", "2", "--samples", "300",
                      "--format", "json"])[1]
    for r, j in zip(rows_of(out), json.loads(js)["results"]):
        # 17 significant digits reproduce the double exactly
        assert float(r["mean"]) == j["mean"] and float(r["se"]) == j["se"]
        assert math.isfinite(j["mean"]) and j["se"] > 0


def test_fit_marks_window(capsys):
    argv = ["fit", "--ensemble", "laguerre", "--side", "upper", "--n", "16", "--kappa", "256",
            "--beta", "2", "--samples", "2000", "--eps-grid", "0.01,0.02,0.04,0.3,0.5"]
    code, out, _ = run(capsys, argv)
    assert code == 0
    rows = rows_of(out)
    assert [r["in_window"] for r in rows] == ["true"] * 3 + ["false"] * 2
    assert rows[-1]["hits"] == "" and rows[0]["hits"] != ""
    assert len({r["fit_status"] for r in rows}) == 1
    assert rows[0]["expected_power"] == "1.5"


def test_fit_reports_fit_error_as_status(capsys, caplog):
    argv = ["fit", "--side", "upper", "--n", "100", "--beta", "2", "--samples", "300",
            "--eps-grid", "0.5,0.7,0.9"]
    code, out, err = run(capsys, argv)
    assert code == 0
    assert rows_of(out)[0]["fit_status"].startswith("error")
    assert "fit failed" in caplog.text


def test_lower_ratio_and_variance(capsys):
    code, out, _ = run(capsys, ["lower-ratio", "--side", "upper", "--n", "50", "--beta", "2",
                                "--eps-grid", "0.01,0.02", "--samples", "3000"])
    assert code == 0
    rows = rows_of(out)
    assert all(0 <= float(r["p_hat"]) <= 1 for r in rows)
    code, out, _ = run(capsys, ["variance", "--ensemble", "laguerre", "--kappa-ratio", "4",
                                "--n-grid", "8,16,32", "--beta", "2", "--samples", "500"])
    assert code == 0
    rows = rows_of(out)
    assert [r["kappa"] for r in rows] == ["32", "64", "128"]
    assert len({r["slope"] for r in rows}) == 1


@pytest.mark.parametrize("ensemble,extra", [("hermite", []), ("laguerre", ["--kappa", "30"])])
def test_sample_reproduces_experiment_draw(capsys, ensemble, extra):
    argv = ["sample", "--ensemble", ensemble, "--n", "12", "--beta", "2", "--seed", "5",
            "--index", "3", *extra]
    code, out, _ = run(capsys, argv)
    assert code == 0
    (row,) = rows_of(out)
    kappa = 30.0 if extra else None
    ref = extremal_values(ensemble, 12, 2.0, 4, 5, kappa=kappa)[3]
    assert abs(float(row["lambda_max"]) - ref) <= 1e-9 * (1 + abs(ref))
    assert float(row["lambda_min"]) < float(row["lambda_max"])
    code, out, _ = run(capsys, argv + ["--matrix"])
    m = rows_of(out)
    assert len(m) == 12 and m[-1]["offdiag"] == ""


def test_workers_env(capsys, monkeypatch):
    argv = ["tail", "--side", "upper", "--n", "30", "--beta", "2", "--samples", "200",
            "--eps", "0.1"]
    monkeypatch.setenv(cli.WORKERS_ENV, "many")
    assert run(capsys, argv)[0] == 2
    monkeypatch.setenv(cli.WORKERS_ENV, "2")
    assert run(capsys, argv)[0] == 0


def _subprocess_run(argv, threads):
    env = dict(os.environ, NUMBA_NUM_THREADS=str(threads), **{cli.WORKERS_ENV: str(threads)})
    res = subprocess.run([sys.executable, "-m", "betatails", *argv], env=env,
                         capture_output=True, check=True)
    return res.stdout


def test_output_identical_across_workers(capsys):
    argv = ["fit", "--side", "lower", "--n", "40", "--beta", "1", "--samples", "20000",
            "--eps-grid", "0.05,0.1,0.15,0.2", "--seed", "11"]
    code, one, _ = run(capsys, argv + ["--workers", "1"])
    assert code == 0
    three = _subprocess_run(argv, 3)
    assert three == one.encode()
