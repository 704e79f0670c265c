import csv
import json
import subprocess
import sys

import pytest

from custodyaudit.cli import main


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A cohort plus trained forests shared by the read-only CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    cohort = root / "cohort.csv"
    assert run_cli("synth", "--n", "500", "--seed", "7", "--out", str(cohort)) == 0
    assert run_cli("train", "--cohort", str(cohort), "--model", "ic",
                   "--trees", "8", "--seed", "3",
                   "--out", str(root / "ic.json")) == 0
    assert run_cli("train", "--cohort", str(cohort), "--model", "re",
                   "--trees", "8", "--seed", "4",
                   "--out", str(root / "re.json")) == 0
    return root


def test_synth_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run_cli("synth", "--n", "200", "--seed", "11", "--out", str(a)) == 0
    assert run_cli("synth", "--n", "200", "--seed", "11", "--out", str(b)) == 0
    assert a.read_bytes() == b.read_bytes()


def test_synth_uses_config_file(tmp_path):
    cfg = tmp_path / "synth.cfg"
    cfg.write_text("n = 40\nseed = 3\nnoise = 0.0\ncoef.ic_institut_adj = 1.0\n")
    out = tmp_path / "c.csv"
    assert run_cli("synth", "--config", str(cfg), "--seed", "3", "--out", str(out)) == 0
    assert len(out.read_text().splitlines()) == 41


def test_missing_seed_is_usage_error(tmp_path):
    assert run_cli("synth", "--n", "10", "--out", str(tmp_path / "x.csv")) == 1


def test_unknown_experiment_is_usage_error(workdir):
    rc = run_cli("perturb", "--cohort", str(workdir / "cohort.csv"),
                 "--forest", str(workdir / "ic.json"),
                 "--experiment", "9", "--seed", "1", "--out", str(workdir))
    assert rc == 1


def test_validation_error_exit_code(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("gender_female,custody_level\n1,2\n")
    rc = run_cli("fairness", "--cohort", str(bad), "--out", str(tmp_path))
    assert rc == 2


def test_missing_file_exit_code(tmp_path):
    rc = run_cli("fairness", "--cohort", str(tmp_path / "nope.csv"), "--out", str(tmp_path))
    assert rc == 2


def test_evaluate_and_importance(workdir, capsys):
    assert run_cli("evaluate", "--cohort", str(workdir / "cohort.csv"),
                   "--forest", str(workdir / "ic.json")) == 0
    out = capsys.readouterr().out
    assert "accuracy=" in out
    csv_path = workdir / "importance.csv"
    assert run_cli("importance", "--forest", str(workdir / "ic.json"),
                   "--out", str(csv_path)) == 0
    rows = list(csv.DictReader(csv_path.open()))
    assert rows[0]["variable"]
    assert abs(sum(float(r["importance"]) for r in rows) - 1.0) < 1e-9


def test_perturb_histograms_conserve_counts(workdir, tmp_path):
    rc = run_cli("perturb", "--cohort", str(workdir / "cohort.csv"),
                 "--forest", str(workdir / "ic.json"),
                 "--experiment", "1", "--n", "100", "--seed", "7",
                 "--out", str(tmp_path))
    assert rc == 0
    rows = list(csv.DictReader((tmp_path / "experiment_e1.csv").open()))
    by_stratum = {}
    for row in rows:
        by_stratum.setdefault(row["stratum"], 0)
        by_stratum[row["stratum"]] += int(row["count"])
    assert by_stratum
    assert all(total == 100 for total in by_stratum.values())
    summary = json.loads((tmp_path / "experiment_e1.json").read_text())
    assert summary["experiment"] == "E1"
    assert summary["n_per_stratum"] == 100


def test_sensitivity_cli(workdir, tmp_path):
    rc = run_cli("sensitivity", "--cohort", str(workdir / "cohort.csv"),
                 "--forest", str(workdir / "ic.json"), "--out", str(tmp_path))
    assert rc == 0
    assert (tmp_path / "sensitivity.csv").exists()
    assert "Variable change" in (tmp_path / "sensitivity.txt").read_text()


def test_trajectory_cli(workdir, tmp_path):
    rc = run_cli("trajectory", "--cohort", str(workdir / "cohort.csv"),
                 "--forest", str(workdir / "re.json"),
                 "--per-group", "5", "--years", "4", "--seed", "9",
                 "--races", "Black,White", "--out", str(tmp_path))
    assert rc == 0
    lines = (tmp_path / "trajectories.csv").read_text().splitlines()
    assert len(lines) > 1
    assert (tmp_path / "volatility.csv").exists()


def test_fairness_cli_with_parity(workdir, tmp_path):
    rc = run_cli("fairness", "--cohort", str(workdir / "cohort.csv"),
                 "--forest", str(workdir / "ic.json"), "--out", str(tmp_path))
    assert rc == 0
    rows = list(csv.DictReader((tmp_path / "fairness.csv").open()))
    assert len(rows) == 16
    parity = list(csv.DictReader((tmp_path / "fairness_parity.csv").open()))
    assert {r["group"] for r in parity} == {"Black", "Hispanic", "age > 45", "female"}


def test_counterfactual_cli(workdir, tmp_path):
    rc = run_cli("counterfactual", "--cohort", str(workdir / "cohort.csv"),
                 "--sample", "60", "--seed", "13", "--out", str(tmp_path))
    assert rc == 0
    summary = json.loads((tmp_path / "counterfactuals.json").read_text())
    assert summary["sample_size"] == 60
    assert 0.0 <= summary["fraction"] <= 1.0


def test_audit_and_report_cli(tmp_path):
    out = tmp_path / "audit"
    rc = run_cli("audit", "--seed", "5", "--n", "400", "--trees", "6",
                 "--perturb-n", "20", "--cf-sample", "40",
                 "--no-figures", "--out", str(out))
    assert rc == 0
    report_path = out / "audit-report.json"
    doc = json.loads(report_path.read_text())
    assert doc["metadata"]["master_seed"] == 5
    assert doc["metadata"]["generated_at"] is None
    assert all(doc["sections"][name].get("status") != "skipped"
               for name in doc["sections"])
    assert (out / "fig1_deltas_e1.csv").exists()
    # regenerate extracts (and figures) from the saved report alone
    rerun = tmp_path / "rerun"
    rc = run_cli("report", "--report", str(report_path), "--out", str(rerun))
    assert rc == 0
    assert (rerun / "fig1_deltas_e1.csv").read_bytes() == \
           (out / "fig1_deltas_e1.csv").read_bytes()
    assert (rerun / "fig7_sensitivity.png").exists()


def test_audit_stamp_records_time(tmp_path):
    out = tmp_path / "stamped"
    rc = run_cli("audit", "--seed", "5", "--n", "200", "--trees", "4",
                 "--perturb-n", "10", "--cf-sample", "20", "--stamp",
                 "--no-figures", "--out", str(out))
    assert rc == 0
    doc = json.loads((out / "audit-report.json").read_text())
    assert doc["metadata"]["generated_at"] is not None


def test_console_entry_point(tmp_path):
    result = subprocess.run(
        [sys.executable, "-m", "custodyaudit.cli", "--version"],
        capture_output=True, text=True)
    assert result.returncode == 0
    assert "custodyaudit" in result.stdout
