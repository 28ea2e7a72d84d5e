import json
import math
import subprocess
import sys

import pytest

from bunching.budget_model import build_schedule
from bunching.cli import main

S0, S1 = math.log(0.8), math.log(0.7)
B2_KINK = ["--k", "0", "--s0", repr(S0), "--s1", repr(S1)]
EXP_KINK = ["--k", "2.0794", "--s0", "0.2624", "--s1", "-0.1054"]


@pytest.fixture(scope="module")
def b2_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("b2")
    assert main(["simulate", "--preset", "counterexample_b2", "--n", "200000", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def exp1_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("exp1")
    assert main(["simulate", "--preset", "exp1", "--out", str(out)]) == 0
    return out


def test_simulate_exp1(exp1_dir):
    lines = (exp1_dir / "sample.csv").read_text().splitlines()
    assert len(lines) == 50_001 and lines[0] == "y,y_tilde,weight,x1,n_star"
    man = json.loads((exp1_dir / "manifest.json").read_text())
    assert man["schema"] == 1 and man["seed"] == 0 and man["config"]["artifacts"]["calibration_sup_error"] < 0.01


def test_simulate_b2_manifest(b2_dir):
    man = json.loads((b2_dir / "manifest.json").read_text())
    assert abs(man["B_hat"] - 0.100148) < 0.003


def test_simulate_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert main(["simulate", "--preset", "exp1", "--n", "500", "--seed", "3", "--out", str(tmp_path / d)]) == 0
    assert (tmp_path / "a" / "sample.csv").read_bytes() == (tmp_path / "b" / "sample.csv").read_bytes()


def test_simulate_unknown_preset(capsys):
    assert main(["simulate", "--preset", "nope"]) == 2
    assert "unknown preset" in capsys.readouterr().err


def test_stdout_only_data(capsys):
    assert main(["simulate", "--preset", "exp1", "--n", "10", "--stdout"]) == 0
    captured = capsys.readouterr()
    assert captured.out.startswith("y,y_tilde,weight")
    assert len(captured.out.splitlines()) == 11


def test_filter_flags_underestimation(b2_dir, tmp_path):
    args = ["filter", "polynomial", "--input", str(b2_dir / "sample.csv"), *B2_KINK,
            "--delta-minus", "0.5", "--delta-plus", "0.5", "--l", "0.9", "--u", "0.9", "--out", str(tmp_path)]
    assert main(args) == 0
    summary = json.loads((tmp_path / "filter.json").read_text())
    assert summary["underestimates_B"] is True
    assert (tmp_path / "cdf.csv").read_text().startswith("grid,cdf_hat")


def test_filter_bad_window(b2_dir, capsys):
    args = ["filter", "polynomial", "--input", str(b2_dir / "sample.csv"), *B2_KINK,
            "--delta-minus", "1.0", "--delta-plus", "0.5", "--l", "0.9", "--u", "0.9"]
    assert main(args) == 2


def test_estimate_trapezoid_json(b2_dir, capsys):
    # estimators read the frictionless column y
    assert main(["estimate", "trapezoid", "--input", str(b2_dir / "sample.csv"), *B2_KINK, "--stdout"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["schema"] == 1 and abs(doc["eps_hat"] - 1.5) < 0.15


def test_estimate_bounds_csv(b2_dir, tmp_path):
    args = ["estimate", "bounds", "--input", str(b2_dir / "sample.csv"), *B2_KINK, "--format", "csv",
            "--out", str(tmp_path)]
    assert main(args) == 0
    lines = (tmp_path / "bounds.csv").read_text().splitlines()
    assert lines[0] == "M,case,eps_lower,eps_upper,marker"
    markers = {ln.rsplit(",", 1)[1] for ln in lines[1:]}
    assert "m1" in markers


def test_estimate_with_schedule(b2_dir, tmp_path, capsys):
    sched = tmp_path / "s.json"
    sched.write_text(build_schedule([1.0], [0.2, 0.3]).to_json())
    assert main(["estimate", "uniform", "--input", str(b2_dir / "sample.csv"), "--schedule", str(sched)]) == 0
    assert json.loads(capsys.readouterr().out)["method"] == "uniform"


def test_tobit_path_csv(exp1_dir, tmp_path):
    args = ["estimate", "tobit-path", "--input", str(exp1_dir / "sample.csv"), *EXP_KINK,
            "--fractions", "1.0,0.5", "--format", "csv", "--out", str(tmp_path)]
    assert main(args) == 0
    rows = (tmp_path / "tobit_path.csv").read_text().splitlines()
    assert rows[0].startswith("fraction,delta,eps_hat,se,n_used") and len(rows) == 3


def test_unknown_estimator():
    assert main(["estimate", "magic", "--input", "x.csv"]) == 2


def test_missing_kink(b2_dir):
    assert main(["estimate", "trapezoid", "--input", str(b2_dir / "sample.csv")]) == 2


def test_report(exp1_dir, capsys):
    args = ["report", "--input", str(exp1_dir / "sample.csv"), *EXP_KINK, "--methods", "trapezoid,bounds,tobit"]
    assert main(args) == 0
    doc = json.loads(capsys.readouterr().out)
    assert set(doc["methods"]) == {"trapezoid", "bounds", "tobit"}
    assert doc["inside_bounds"]["trapezoid"].get("m0", True)


def test_report_empty_methods(exp1_dir):
    assert main(["report", "--input", str(exp1_dir / "sample.csv"), *EXP_KINK, "--methods", ""]) == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "bunching", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "0.1.0" in res.stdout
