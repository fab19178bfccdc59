from __future__ import annotations

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from carhy.cli import main
from carhy.pipeline import ExpressionMatrix, SampleMeta, write_expression, write_metadata
from carhy.simulation import synthetic_expression


@pytest.fixture
def toy_files(tmp_path):
    mat, meta, _ = synthetic_expression(n_genes=40, seed=11)
    tpm = ExpressionMatrix(mat.gene_ids, mat.sample_ids, np.exp2(mat.values) - 1.0, "tpm")
    e, m = tmp_path / "expr.tsv", tmp_path / "meta.tsv"
    write_expression(tpm, e)
    write_metadata(meta, m)
    return e, m


def test_analyze_ok(toy_files, tmp_path):
    e, m = toy_files
    out = tmp_path / "res.tsv"
    code = main(["analyze", "--expr", str(e), "--meta", str(m), "--mc-draws", "1000", "--out", str(out)])
    assert code == 0
    rows = list(csv.DictReader(out.open(), delimiter="\t"))
    assert len(rows) == 40 and "TDR_q" in rows[0]


def test_analyze_missing_sample_exit_2(toy_files, tmp_path, capsys):
    e, m = toy_files
    lines = m.read_text().splitlines()
    m.write_text("\n".join(lines[:-1]) + "\n")
    assert main(["analyze", "--expr", str(e), "--meta", str(m), "--out", str(tmp_path / "x")]) == 2
    assert "error" in capsys.readouterr().err


def test_analyze_missing_file_exit_2(tmp_path):
    assert main(["analyze", "--expr", str(tmp_path / "nope"), "--meta", str(tmp_path / "nope")]) == 2


def test_analyze_flagged_exit_3(tmp_path):
    meta = [SampleMeta(f"{c}_{t}_{j}", c, float(t)) for c in "AB" for t in range(0, 24, 4) for j in range(3)]
    rng = np.random.default_rng(0)
    vals = np.vstack([np.full(36, 3.0), 4 + rng.normal(size=36)])
    mat = ExpressionMatrix(("flat", "noisy"), tuple(s.sample_id for s in meta), vals, "log")
    e, m = tmp_path / "e.tsv", tmp_path / "m.tsv"
    write_expression(mat, e)
    write_metadata(meta, m)
    out = tmp_path / "r.tsv"
    code = main(["analyze", "--expr", str(e), "--meta", str(m), "--units", "log",
                 "--mc-draws", "1000", "--out", str(out)])
    assert code == 3
    assert "zero_amplitude" in out.read_text()


def test_simulate_builtin(tmp_path):
    out = tmp_path / "sim.csv"
    assert main(["simulate", "--case", "T1-5", "--case", "S1-5", "--reps", "100", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert [(r["case"], r["test"], r["metric"]) for r in rows if r["metric"] == "rejection_rate"] == [
        ("T1-5", "TDR", "rejection_rate"), ("S1-5", "TDM", "rejection_rate")]


def test_simulate_scenario_file(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"scenarios": [{"label": "x", "amplitudes": [1], "phases": [5]}]}))
    out = tmp_path / "o.csv"
    assert main(["simulate", "--scenario-file", str(path), "--test", "TR", "--reps", "100",
                 "--mc-draws", "1000", "--out", str(out)]) == 0
    assert "x,TR,rejection_rate" in out.read_text()


def test_simulate_unknown_case():
    assert main(["simulate", "--case", "nope", "--reps", "100"]) == 2


def test_fdr_bench_json(tmp_path):
    spec = tmp_path / "f.json"
    spec.write_text(json.dumps({"label": "small", "K": 2, "n_genes": 200}))
    out = tmp_path / "f.csv"
    assert main(["fdr-bench", "--spec", str(spec), "--reps", "2", "--out", str(out)]) == 0
    metrics = {r["metric"] for r in csv.DictReader(out.open())}
    assert metrics == {"fdr", "f1"}


def test_fdr_bench_bad_spec():
    assert main(["fdr-bench", "--spec", "table9"]) == 2


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "carhy.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "analyze" in res.stdout
