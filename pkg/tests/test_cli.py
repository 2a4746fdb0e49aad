import json

import pytest

from hybridsim.cli import main


def run(args, tmp_path):
    return main([*args, "--out", str(tmp_path)])


def test_check_bundled(tmp_path, capsys):
    assert run(["check", "--network", "gene_burst.rxn"], tmp_path) == 0
    out = capsys.readouterr().out
    assert "R1 = {r4, r5}" in out
    assert "R_d = {r1, r2, r3}" in out
    assert "r5: R1 h_r=200" in out
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"] == "check" and manifest["status"] == "ok"


def test_single_hybrid_run(tmp_path):
    code = run(["hybrid", "--network", "gene_burst.rxn", "--T", "20", "--h", "0.5",
                "--lambda-max", "1.5", "--sample-dt", "5", "--seed", "3"], tmp_path)
    assert code == 0
    lines = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert lines[0] == "t,S1,S2,S3,S4" and len(lines) == 6
    diag = json.loads((tmp_path / "diagnostics.json").read_text())
    assert set(diag) == {"events_per_reaction", "thinned", "clamps", "retries",
                         "lambda_max_used", "wall_time_seconds"}


def test_manifest_reruns_identically(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["ssa", "--network", "gene_burst.rxn", "--T", "30", "--replicates", "4", "--seed", "9"]
    assert run(args, a) == 0
    m = json.loads((a / "manifest.json").read_text())
    assert m["seed"] == 9 and m["options"]["T"] == 30.0
    assert run(args, b) == 0
    assert (a / "ssa_final.csv").read_text() == (b / "ssa_final.csv").read_text()


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("HYBRIDSIM_SEED", "17")
    assert run(["ssa", "--network", "gene_burst.rxn", "--T", "5"], tmp_path) == 0
    assert json.loads((tmp_path / "manifest.json").read_text())["seed"] == 17


def test_compare_writes_histograms_and_ks(tmp_path):
    code = run(["compare", "--network", "gene_burst.rxn", "--T", "20", "--replicates", "30",
                "--h", "0.5", "--lambda-max", "1.5", "--seed", "1"], tmp_path)
    assert code == 0
    assert (tmp_path / "hist_S3.csv").exists() and (tmp_path / "hist_S4.csv").exists()
    report = json.loads((tmp_path / "ks_report.json").read_text())
    assert set(report["ks"]) == {"S3", "S4"}


def test_converge_and_bench(tmp_path):
    text = ("species A continuous init=100\n"
            "reaction b: 0 -> A rate=100 group=diffusion\nreaction d: A -> 0 rate=1 group=diffusion\n")
    path = tmp_path / "ou.rxn"
    path.write_text(text)
    assert run(["converge", "--network", str(path), "--T", "0.5", "--h", "0.01",
                "--replicates", "5"], tmp_path) == 0
    assert (tmp_path / "convergence.csv").read_text().startswith("h,mse,n\n")
    assert run(["bench", "--network", "gene_burst.rxn", "--T", "10", "--h", "0.5", "1.0",
                "--replicates", "2", "--lambda-max", "1.5"], tmp_path) == 0
    assert len((tmp_path / "benchmark.csv").read_text().splitlines()) == 3


def test_unknown_flag_is_usage_error(tmp_path, capsys):
    assert run(["ssa", "--network", "gene_burst.rxn", "--bogus"], tmp_path) == 2
    assert "usage" in capsys.readouterr().err


@pytest.mark.parametrize("args", [
    ["ssa", "--network", "gene_burst.rxn", "--T", "-1"],
    ["hybrid", "--network", "gene_burst.rxn"],
    ["ssa", "--network", "no_such_file.rxn"],
])
def test_usage_errors(tmp_path, args):
    assert run(args, tmp_path) == 2


def test_parse_error_exit(tmp_path, capsys):
    path = tmp_path / "bad.rxn"
    path.write_text("species A discrete init=1\nreaction r: A -> B rate=1\n")
    assert run(["check", "--network", str(path)], tmp_path) == 3
    err = capsys.readouterr().err.strip()
    assert err.startswith("error: parse:") and len(err.splitlines()) == 1


def test_runtime_error_exit(tmp_path, capsys):
    code = run(["hybrid", "--network", "gene_burst.rxn", "--T", "100", "--lambda-max", "1.0"], tmp_path)
    assert code == 4
    assert capsys.readouterr().err.startswith("error: runtime:")
