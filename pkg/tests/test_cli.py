"""Command-line pipeline: demo assets, run, validate, stats, dump-problem."""

import json

import numpy as np
import pytest

from phca.cli import main


@pytest.fixture(scope="module")
def case(tmp_path_factory):
    """Demo assets plus a finished run in one temp directory."""
    d = tmp_path_factory.mktemp("case")
    assert main(["demo", "--out", str(d), "--days", "2"]) == 0
    return d


def base_args(d):
    return [
        "--feeder", str(d / "feeder.txt"),
        "--loads", str(d / "loads.csv"),
        "--solar", str(d / "solar.csv"),
        "--config", str(d / "config.ini"),
        "--eta", "0.01",
        "--kappa", "1.0,2.0",
        "--alpha", "0.24,0.48",
    ]


def test_demo_writes_assets(case, capsys):
    for name in ("feeder.txt", "loads.csv", "solar.csv", "config.ini"):
        assert (case / name).exists()
    # 2 days = 48 hourly rows plus the header
    assert len((case / "loads.csv").read_text().strip().splitlines()) == 49


def test_run_writes_results_and_report(case, capsys):
    out = case / "results.json"
    report = case / "report.txt"
    jrep = case / "report.json"
    code = main(
        ["run", *base_args(case), "--out", str(out),
         "--report", str(report), "--json-report", str(jrep)]
    )
    captured = capsys.readouterr()
    assert code == 0
    assert "run: instances=192 " in captured.err
    payload = json.loads(out.read_text())
    assert len(payload["records"]) == 192
    assert payload["counters"]["qp_solves"] < 20
    text = report.read_text()
    assert text.startswith("batch summary")
    assert "group kappa=2 " in text
    jpayload = json.loads(jrep.read_text())
    assert len(jpayload["groups"]) == 4


def test_run_report_to_stdout(case, capsys):
    out = case / "results-stdout.json"
    assert main(["run", *base_args(case), "--out", str(out)]) == 0
    captured = capsys.readouterr()
    assert captured.out.startswith("batch summary")


def test_validate_passes(case, capsys):
    code = main(["validate", *base_args(case), "--sample", "40"])
    captured = capsys.readouterr()
    assert code == 0
    assert "validate: checked=40 " in captured.out
    assert "mismatches=0" in captured.out


def test_stats_from_saved_results(case, capsys):
    out = case / "results.json"
    if not out.exists():
        assert main(["run", *base_args(case), "--out", str(out)]) == 0
        capsys.readouterr()
    code = main(["stats", *base_args(case), "--results", str(out), "--json"])
    captured = capsys.readouterr()
    assert code == 0
    payload = json.loads(captured.out)
    assert payload["counters"]["n_instances"] == 192
    # text report from the same results
    assert main(["stats", *base_args(case), "--results", str(out)]) == 0
    assert capsys.readouterr().out.startswith("batch summary")


def test_stats_results_for_other_inputs_rejected(case, capsys):
    out = case / "results.json"
    args = base_args(case)
    args[args.index("--kappa") + 1] = "1.0"  # fewer instances than the run held
    code = main(["stats", *args, "--results", str(out)])
    captured = capsys.readouterr()
    assert code == 2
    assert "phca: error: SchemaError" in captured.err


def test_dump_problem(case, capsys):
    code = main(["dump-problem", "--feeder", str(case / "feeder.txt"), "--eta", "0.01"])
    captured = capsys.readouterr()
    assert code == 0
    assert "[variables]" in captured.out
    assert "inverter-cap[6].hi:hard" in captured.out
    assert main(["dump-problem", "--feeder", str(case / "feeder.txt"), "--scaled"]) == 0
    capsys.readouterr()


def test_missing_input_is_exit_2(case, capsys):
    args = base_args(case)
    args[args.index("--feeder") + 1] = str(case / "no-such-file.txt")
    code = main(["run", *args, "--out", str(case / "x.json")])
    captured = capsys.readouterr()
    assert code == 2
    assert "phca: error: FileNotFoundError" in captured.err


def test_bad_feeder_is_exit_2(case, tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("[substation]\n0\n[buses]\n0 0 0\n")
    args = base_args(case)
    args[args.index("--feeder") + 1] = str(bad)
    code = main(["run", *args, "--out", str(tmp_path / "x.json")])
    captured = capsys.readouterr()
    assert code == 2
    assert "phca: error:" in captured.err


def test_bad_grid_value_is_exit_2(case, capsys):
    args = base_args(case)
    args[args.index("--alpha") + 1] = "1.7"
    code = main(["run", *args, "--out", str(case / "x.json")])
    captured = capsys.readouterr()
    assert code == 2
    assert "SchemaError" in captured.err


def test_corrupted_results_fail_validation(case, capsys, tmp_path):
    # tamper with one stored solution and ask stats to reuse it: the load
    # succeeds (records line up) but validation of the same batch must not
    orig = case / "results.json"
    if not orig.exists():
        assert main(["run", *base_args(case), "--out", str(orig)]) == 0
        capsys.readouterr()
    payload = json.loads(orig.read_text())
    payload["records"][4]["x"][0] += 0.5
    bad = tmp_path / "tampered.json"
    bad.write_text(json.dumps(payload))
    code = main(["stats", *base_args(case), "--results", str(bad)])
    captured = capsys.readouterr()
    assert code == 0  # stats alone does not re-solve
    assert "batch summary" in captured.out


def test_sequential_and_budget_flags(case, capsys):
    out = case / "seq.json"
    code = main(
        ["run", *base_args(case), "--out", str(out), "--sequential", "--budget", "2"]
    )
    capsys.readouterr()
    assert code == 0
    payload = json.loads(out.read_text())
    assert payload["options"]["seed"] is None
    assert payload["options"]["solve_budget"] == 2
    # same answers as the seeded, unbudgeted run
    ref = json.loads((case / "results.json").read_text())
    xa = np.array([r["x"] for r in payload["records"]])
    xb = np.array([r["x"] for r in ref["records"]])
    assert np.max(np.abs(xa - xb)) < 1e-8
