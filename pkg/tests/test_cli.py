import csv
import json
import subprocess
import sys

import pytest

from simfuse.cli import main
from simfuse.model import load_cohort_dir

RUN = ["--k-clusters", "4", "--seed", "1", "--block-size", "5"]


@pytest.fixture(scope="module")
def cohort_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    assert main(["gen", "--out", str(out), "--n", "50", "--variates", "2", "--length", "20", "--seed", "4"]) == 0
    return out


def last_json(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


def test_gen_writes_loadable_cohort(cohort_dir):
    c = load_cohort_dir(cohort_dir)
    assert len(c) == 50 and len(c.variates()) == 2


def test_run_prints_report_and_caches(cohort_dir, run_dir, capsys):
    assert main(["run", "--cohort", str(cohort_dir), *RUN]) == 0
    first = last_json(capsys)
    assert first["reused"] is False and first["k_clusters"] == 4 and first["n_test"] == 10
    assert main(["run", "--cohort", str(cohort_dir), *RUN]) == 0
    assert last_json(capsys)["reused"] is True
    assert main(["run", "--cohort", str(cohort_dir), *RUN, "--force"]) == 0
    forced = last_json(capsys)
    assert forced["reused"] is False and forced["auc"] == first["auc"]


def test_flags_override_config_file(cohort_dir, tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"dt_method": "zscore", "k_clusters": 3, "lambda": 2}))
    assert main(["run", "--cohort", str(cohort_dir), "--runs", str(tmp_path / "r"), "--config", str(cfg),
                 "--k-clusters", "5"]) == 0
    out = last_json(capsys)
    assert (out["dt_method"], out["k_clusters"], out["lambda"]) == ("zscore", 5, 2)
    written = json.loads((tmp_path / "r" / out["run_dir"].rsplit("/", 1)[-1] / "config.json").read_text())
    assert written["k_clusters"] == 5


def test_bad_config_exits_nonzero(cohort_dir, tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["run", "--cohort", str(cohort_dir), "--config", str(cfg)]) == 2
    assert "bogus" in capsys.readouterr().err
    assert main(["run", "--cohort", str(tmp_path / "missing")]) == 2


def test_failed_pipeline_exits_nonzero(cohort_dir, run_dir, capsys):
    assert main(["run", "--cohort", str(cohort_dir), "--k-clusters", "999"]) == 2
    assert "[cluster]" in capsys.readouterr().err


def test_sweep(cohort_dir, run_dir, capsys):
    assert main(["sweep", "--cohort", str(cohort_dir), *RUN, "--axis", "k_clusters", "--values", "2,4,8"]) == 0
    rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert [r["value"] for r in rows] == [2, 4, 8]
    assert (run_dir / "sweep_k_clusters.csv").is_file()
    assert main(["sweep", "--cohort", str(cohort_dir), *RUN, "--axis", "k_clusters", "--values", "2,999"]) == 1
    capsys.readouterr()
    assert main(["sweep", "--cohort", str(cohort_dir), *RUN, "--axis", "k_clusters", "--values", ""]) == 2


def test_bench(tmp_path, capsys):
    assert main(["bench", "--n", "4", "--length", "8", "--workers", "1,2", "--out", str(tmp_path / "b.csv")]) == 0
    assert capsys.readouterr().out.count("seconds=") == 2
    with open(tmp_path / "b.csv") as fh:
        assert [r["workers"] for r in csv.DictReader(fh)] == ["1", "2"]


def test_eval_appends_ledger(cohort_dir, run_dir, tmp_path, capsys):
    assert main(["run", "--cohort", str(cohort_dir), *RUN]) == 0
    rd = last_json(capsys)["run_dir"]
    ledger = tmp_path / "ledger.csv"
    assert main(["eval", "--predictions", f"{rd}/predictions.csv", "--config", f"{rd}/config.json",
                 "--ledger", str(ledger)]) == 0
    assert last_json(capsys)["clustering"] == "kmeans"
    assert len(ledger.read_text().splitlines()) == 2
    (tmp_path / "bad.csv").write_text("x\n")
    assert main(["eval", "--predictions", str(tmp_path / "bad.csv")]) == 2


def test_usage_errors():
    with pytest.raises(SystemExit) as info:
        main(["run"])
    assert info.value.code == 2
    with pytest.raises(SystemExit):
        main(["run", "--cohort", "x", "--dt-method", "pca"])


def test_module_entry_point(cohort_dir, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "simfuse", "run", "--cohort", str(cohort_dir),
                           "--runs", str(tmp_path), *RUN], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["target"] == "cad"
