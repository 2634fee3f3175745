"""Shared CLI pipeline run used by the CLI and acceptance tests."""
import hashlib
from pathlib import Path

from txscam.cli import main

GEN = ["--n-normal", "20", "--n-scam", "20", "--n-phishing", "0", "--pool-size", "200", "--background-tx", "400"]


def run_pipeline(root: Path, seed: int = 3) -> Path:
    s = ["--seed", str(seed)]
    data, run = root / "data", root / "run"
    assert main(["gen", "--out", str(data), *GEN, *s]) == 0
    src = ["--transactions", str(data / "transactions.csv"), "--labels", str(data / "labels.csv")]
    assert main(["train", *src, "--out", str(run), "--epochs", "2", "--window", "5", *s]) == 0
    ck = ["--checkpoint", str(run / "checkpoint.json")]
    assert main(["eval", *src, *ck, "--out", str(root / "eval"), *s]) == 0
    assert main(["detect", *src, *ck, "--out", str(root / "detect"), *s]) == 0
    assert main(["export-embeddings", *src, *ck, "--out", str(root / "emb"), *s]) == 0
    return root


def digest(root: Path) -> dict[str, str]:
    """Content hash of every output file, keyed by path relative to the run root."""
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file() and p.suffix != ".log"}


def run_every_command(root: Path, base_url: str, seed: int = 3) -> Path:
    """The train/eval pipeline plus fetch, ingest, stats and sample."""
    run_pipeline(root, seed)
    s = ["--seed", str(seed)]
    data = root / "data"
    seeds = ",".join("0x" + f"{i:040x}" for i in (0, 5))
    assert main(["fetch", "--base-url", base_url, "--seeds", seeds, "--depth", "2",
                 "--requests-per-second", "1000", "--out", str(root / "fetch"), *s]) == 0
    assert main(["ingest", "--transactions", str(data / "transactions.csv"), "--labels", str(data / "labels.csv"),
                 "--out", str(root / "ingest"), *s]) == 0
    src = ["--transactions", str(root / "ingest" / "transactions.csv"),
           "--labels", str(root / "ingest" / "labels.csv")]
    assert main(["stats", *src, "--out", str(root / "stats"), *s]) == 0
    assert main(["sample", *src, "--out", str(root / "sample"), "--window", "5", *s]) == 0
    return root
