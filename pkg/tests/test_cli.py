import csv
import json
import subprocess
import sys

import pytest

from mergeeig.cli import main
from mergeeig.data import ihdp_surrogate, write_csv

SMALL = ["--sites", "3"]


@pytest.fixture
def small_config(tmp_path):
    p = tmp_path / "cfg.yaml"
    p.write_text(
        "experiment:\n  holdout_size: 300\n  sites:\n    host_size: 120\n    size_range: [40, 80]\n"
        "illustrative:\n  ratios: [1.0, 1.5, 32.0]\n  seeds: 3\n"
    )
    return p


def test_rank_writes_report_table_and_figure(tmp_path, small_config, capsys):
    out = tmp_path / "o"
    assert main(["rank", "--config", str(small_config), "--seed", "2", "--out", str(out), *SMALL]) == 0
    doc = json.loads((out / "rank_report.json").read_text())
    assert doc["config"]["seed"] == 2 and doc["config"]["sites"]["K"] == 3 and len(doc["ranking"]) == 3
    rows = list(csv.reader((out / "rank_table.csv").open()))
    assert rows[0] == ["site", "score", "rank", "pehe", "true_rank"] and len(rows) == 4
    assert (out / "rank.png").stat().st_size > 0
    assert "spearman rho" in capsys.readouterr().out


def test_rank_flags_override_config(tmp_path, small_config):
    out = tmp_path / "o"
    args = ["rank", "--config", str(small_config), "--estimator", "closed_full", "--privacy", "dp", "--out", str(out), "--no-plot", *SMALL]
    assert main(args) == 0
    doc = json.loads((out / "rank_report.json").read_text())
    assert doc["config"]["estimator"] == "closed_full" and doc["config"]["privacy"] == "dp"
    assert not (out / "rank.png").exists()


def test_rank_from_csv_source(tmp_path):
    src = tmp_path / "src.csv"
    write_csv(src, ihdp_surrogate(3))
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"experiment": {"holdout_size": 200, "sites": {"source": str(src), "K": 2, "host_size": 100, "size_range": [40, 60]}}}))
    assert main(["rank", "--config", str(cfg)]) == 0


def test_illustrate(tmp_path, small_config, capsys):
    out = tmp_path / "o"
    assert main(["illustrate", "--config", str(small_config), "--out", str(out)]) == 0
    doc = json.loads((out / "illustrate_report.json").read_text())
    assert doc["ratios"] == [1.0, 1.5, 32.0] and len(doc["regions"]) == 3
    assert (out / "illustrate.png").exists() and (out / "illustrate_table.csv").exists()
    assert "region" in capsys.readouterr().out


def test_privacy_commands(tmp_path, small_config):
    for cmd, name in (("mpc-bench", "mpc"), ("dp-compare", "dp")):
        out = tmp_path / cmd
        assert main([cmd, "--config", str(small_config), "--out", str(out), *SMALL]) == 0
        doc = json.loads((out / f"{name}_report.json").read_text())
        assert doc["mode"] == name and len(doc["plain"]) == 3
    mpc = json.loads((tmp_path / "mpc-bench" / "mpc_report.json").read_text())
    assert mpc["mse"] < 1e-4 and mpc["config"]["prior_precision"] == 1e-3


def test_validate(capsys):
    assert main(["validate"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 5 and "FAIL" not in out


def test_exit_codes(tmp_path, capsys):
    assert main(["rank", "--model", "causal_gp", "--estimator", "nmc"]) == 2
    assert main(["rank", "--config", str(tmp_path / "missing.yaml")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"experiment": {"sites": {"nonsense": 1}}}))
    assert main(["rank", "--config", str(bad)]) == 2
    csv_cfg = tmp_path / "c.json"
    (tmp_path / "broken.csv").write_text("x1,t\n0,7\n")
    csv_cfg.write_text(json.dumps({"experiment": {"sites": {"source": str(tmp_path / "broken.csv")}}}))
    assert main(["rank", "--config", str(csv_cfg)]) == 3
    assert "error:" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_console_script_entry_point():
    r = subprocess.run([sys.executable, "-m", "mergeeig.cli", "validate"], capture_output=True, text=True)
    assert r.returncode == 0 and "PASS" in r.stdout


def test_validate_failure_exits_4(monkeypatch, capsys):
    from mergeeig import validate
    from mergeeig.validate import CheckResult

    monkeypatch.setattr(validate, "run_checks", lambda seed: [CheckResult("forced", False, "broken on purpose")])
    assert main(["validate"]) == 4
    assert "FAIL" in capsys.readouterr().out
