import csv
import shutil
import json
import subprocess
import sys

import pytest

from pipeline import digest, run_pipeline
from txscam.cli import COMMANDS, EXIT_INPUT, EXIT_OK, EXIT_USAGE, main


def test_help_exits_zero():
    r = subprocess.run([sys.executable, "-m", "txscam", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for name in COMMANDS:
        assert name in r.stdout


@pytest.mark.parametrize("name", sorted(COMMANDS))
def test_subcommand_help(name):
    with pytest.raises(SystemExit) as e:
        main([name, "--help"])
    assert e.value.code == 0


def test_usage_errors():
    assert main([]) == EXIT_USAGE
    with pytest.raises(SystemExit) as e:
        main(["train", "--no-such-flag"])
    assert e.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as e:
        main(["train", "--window", "7"])
    assert e.value.code == EXIT_USAGE


def test_input_errors(tmp_path):
    assert main(["stats", "--transactions", str(tmp_path / "missing.csv"), "--out", str(tmp_path)]) == EXIT_INPUT
    cfg = tmp_path / "c.yaml"
    cfg.write_text("bogus_key: 1\n")
    assert main(["stats", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_INPUT
    assert main(["fetch", "--out", str(tmp_path)]) == EXIT_INPUT


def test_single_class_training_rejected(tmp_path):
    assert main(["gen", "--out", str(tmp_path), "--n-normal", "3", "--n-scam", "0", "--n-phishing", "0",
                 "--pool-size", "50", "--background-tx", "50"]) == EXIT_OK
    assert main(["train", "--transactions", str(tmp_path / "transactions.csv"), "--labels",
                 str(tmp_path / "labels.csv"), "--out", str(tmp_path / "r"), "--epochs", "1"]) == EXIT_INPUT


def test_ingest_stats_sample(tmp_path):
    raw = tmp_path / "raw.csv"
    raw.write_text(
        "hash,from,to,value,timestamp,block\n"
        f"0x{1:064x},0x{'a' * 40},0x{'b' * 40},1000000000000000000,1600000000,1\n"
        f"0x{2:064x},0x{'b' * 40},0x{'c' * 40},5,1600000100,2\n"
        "garbage line\n"
    )
    assert main(["ingest", "--transactions", str(raw), "--out", str(tmp_path / "i")]) == EXIT_OK
    rep = json.loads((tmp_path / "i" / "ingest_report.json").read_text())
    assert rep["records"] == 2 and rep["skipped"] == 1
    assert main(["ingest", "--transactions", str(raw), "--strict", "--out", str(tmp_path / "s")]) == EXIT_INPUT
    norm = ["--transactions", str(tmp_path / "i" / "transactions.csv")]
    assert main(["stats", *norm, "--out", str(tmp_path / "st")]) == EXIT_OK
    st = json.loads((tmp_path / "st" / "stats.json").read_text())
    assert st["node_count"] == 3
    assert main(["sample", *norm, "--accounts", "0x" + "b" * 40, "--out", str(tmp_path / "sm")]) == EXIT_OK
    assert (tmp_path / "sm" / "samples" / ("0x" + "b" * 40 + ".jsonl")).is_file()


def test_pipeline_outputs_and_determinism(tmp_path):
    a = run_pipeline(tmp_path / "a")
    da = digest(a)
    shutil.rmtree(a)
    assert digest(run_pipeline(tmp_path / "a")) == da
    metrics = json.loads((a / "eval" / "metrics.json").read_text())
    assert 0.0 <= metrics["metrics"]["weighted_f1"] <= 1.0
    with open(a / "detect" / "detections.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 40 and {r["label"] for r in rows} <= {"normal", "malicious"}
    assert all(0.0 <= float(r["score"]) <= 1.0 for r in rows)
    assert any(k.startswith("emb/embeddings/") and k.endswith(".csv") for k in da)
    resolved = json.loads((a / "run" / "resolved_config.json").read_text())
    assert resolved["seed"] == 3 and resolved["window"] == 5
