import csv
import json
import os
import subprocess
from pathlib import Path

import pytest

CLI = os.environ.get("DEBIATT_CLI")

pytestmark = pytest.mark.skipif(not CLI, reason="DEBIATT_CLI not set")


def run(*args, check=True):
    proc = subprocess.run([CLI, *map(str, args)], capture_output=True, text=True)
    if check and proc.returncode != 0:
        raise AssertionError(f"exit {proc.returncode}: {proc.stderr}")
    return proc


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def simulate(out, *extra):
    run("simulate", "--preset", "paper-1cov", "--reps", 2, "--seed", 7, "--out", out, *extra)
    return out


def test_simulate_writes_panels_and_manifest(tmp_path):
    out = simulate(tmp_path / "a")
    assert sorted(p.name for p in out.iterdir()) == ["manifest.json", "panel_rep0.csv", "panel_rep1.csv"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 7
    ids = {r["id"] for r in read_rows(out / "panel_rep0.csv")}
    assert len(ids) == 1000


def test_simulate_is_byte_identical_on_rerun(tmp_path):
    a = simulate(tmp_path / "a")
    b = simulate(tmp_path / "b")
    for name in ("panel_rep0.csv", "panel_rep1.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_override_sets_cohort_size(tmp_path):
    out = simulate(tmp_path / "a", "--set", "n=50")
    for name in ("panel_rep0.csv", "panel_rep1.csv"):
        assert len({r["id"] for r in read_rows(out / name)}) == 50


def test_unknown_key_is_a_config_error(tmp_path):
    proc = run("simulate", "--preset", "paper-1cov", "--set", "bogus=1", "--out", tmp_path, check=False)
    assert proc.returncode == 2
    assert "bogus" in proc.stderr


def test_estimate_writes_one_file_per_estimator(tmp_path):
    sim = simulate(tmp_path / "sim", "--set", "n=200")
    out = tmp_path / "est"
    run("estimate", "--panel", sim / "panel_rep0.csv", "--estimators", "oracle,uncorrected,debiased",
        "--out", out)
    coef = sorted(p.name for p in out.glob("coef_*.csv"))
    assert coef == ["coef_debiased.csv", "coef_oracle.csv", "coef_uncorrected.csv"]
    assert len(list(out.glob("cumulative_*.csv"))) == 3
    assert (out / "var_model.txt").exists()


def test_estimate_names_subject_without_pre_treatment_history(tmp_path):
    sim = simulate(tmp_path / "sim", "--set", "n=100")
    rows = read_rows(sim / "panel_rep0.csv")
    for r in rows:
        if r["id"] == "3":
            r["D"] = "1"
    bad = tmp_path / "bad.csv"
    with open(bad, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        w.writeheader()
        w.writerows(rows)
    proc = run("estimate", "--panel", bad, "--estimators", "debiased", "--out", tmp_path / "e", check=False)
    assert proc.returncode == 3
    assert "subject 3" in proc.stderr


def test_oracle_equals_debiased_without_covariate_noise(tmp_path):
    sim = simulate(tmp_path / "sim", "--set", "n=300", "--set", "sigma=0")
    out = tmp_path / "est"
    run("estimate", "--panel", sim / "panel_rep0.csv", "--estimators", "oracle,debiased", "--out", out)
    oracle = read_rows(out / "coef_oracle.csv")
    debiased = read_rows(out / "coef_debiased.csv")
    assert len(oracle) == len(debiased)
    for a, b in zip(oracle, debiased):
        assert (a["t_index"], a["coef_name"]) == (b["t_index"], b["coef_name"])
        for col in ("value", "cumulative"):
            if a[col] in ("NA", "nan") or b[col] in ("NA", "nan"):
                assert a[col] == b[col]
            else:
                x, y = float(a[col]), float(b[col])
                assert abs(x - y) <= 1e-9 * max(1.0, abs(x))


def bench(out, jobs=1):
    run("benchmark", "--preset", "paper-1cov", "--set", "sigma=0.4", "--set", "n=200", "--reps", 10,
        "--seed", 1, "--jobs", jobs, "--out", out)
    return out


def test_benchmark_report_shape(tmp_path):
    out = bench(tmp_path / "b")
    rows = read_rows(out / "replicates.csv")
    assert len(rows) == 10
    for col in ("oracle", "naive", "uncorrected", "debiased", "debiased_true"):
        assert col in rows[0]
    report = (out / "report.txt").read_text()
    for col in ("oracle", "naive", "uncorrected", "debiased", "debiased_true"):
        assert col in report
    assert len(read_rows(out / "summary.csv")) == 5


def test_benchmark_is_deterministic_across_jobs(tmp_path):
    a = bench(tmp_path / "a", jobs=1)
    b = bench(tmp_path / "b", jobs=2)
    for name in ("replicates.csv", "summary.csv", "truth.csv", "report.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_report_rebuilds_table(tmp_path):
    out = bench(tmp_path / "b")
    proc = run("report", "--summary", out / "summary.csv")
    assert proc.stdout.strip() in (out / "report.txt").read_text()
