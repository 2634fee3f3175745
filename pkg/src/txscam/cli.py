"""Command-line entry point: ``txscam <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 input error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import nn
from .encoder import FeatureConfig
from .evaluate import confusion, report
from .fetch import CrawlSpec, FetchConfig, FetchError, crawl_neighborhood
from .pipeline import (Split, account_sequence, build_examples, detect, labeled_accounts, sample_account,
                       split_accounts)
from .seqmodel import ConflictingFlags, Model, SeqModelConfig, SingleClassDataset, label_from_scores, predict_scores, train
from .strwalk import TemporalVariant, WalkConfig, write_sampled_graph
from .encoder import encode_sequence
from .synthgen import GenConfig, InvalidPhaseConfig, gen_dataset
from .txgraph import (Label, MalformedRecord, UnreadableInput, build_graph, canonical_address, degree_stats,
                      parse_labels, parse_transactions, write_labels, write_transactions_csv)

log = logging.getLogger("txscam")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_RUNTIME = 0, 1, 2, 3


class InputError(Exception):
    """Bad or missing user input; maps to exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


PATH_KEYS = ("transactions", "labels", "checkpoint", "out", "format", "split", "accounts")
FETCH_KEYS = ("base_url", "requests_per_second", "query_timeout", "max_retries", "page_size", "workers",
              "depth", "start_block", "end_block", "per_node_tx_cap", "seeds")


@dataclass
class RunConfig:
    """Flat resolved configuration for one command invocation."""
    values: dict = field(default_factory=dict)

    @staticmethod
    def known_keys() -> set[str]:
        keys = {f.name for f in fields(WalkConfig)} | {f.name for f in fields(FeatureConfig)}
        keys |= {f.name for f in fields(SeqModelConfig)} | {f.name for f in fields(GenConfig)}
        keys |= set(PATH_KEYS) | set(FETCH_KEYS)
        return keys

    @classmethod
    def load(cls, path: str | None) -> "RunConfig":
        if not path:
            return cls({})
        p = Path(path)
        if not p.is_file():
            raise InputError(f"config file not found: {path}")
        try:
            doc = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise InputError(f"config file unreadable: {exc}") from exc
        if not isinstance(doc, dict) or any(isinstance(v, (dict, list)) for v in doc.values()):
            raise InputError("config must be a flat key-value document")
        unknown = set(doc) - cls.known_keys()
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        return cls(dict(doc))

    def set(self, key, value):
        if value is not None:
            self.values[key] = value

    def get(self, key, default=None):
        return self.values.get(key, default)

    def _build(self, klass, **extra):
        names = {f.name for f in fields(klass)}
        kw = {k: v for k, v in self.values.items() if k in names}
        kw.update(extra)
        return klass(**kw)

    def walk(self) -> WalkConfig:
        variant = self.values.get("variant", "min")
        return self._build(WalkConfig, variant=TemporalVariant(variant) if isinstance(variant, str) else variant)

    def features(self) -> FeatureConfig:
        return self._build(FeatureConfig)

    def seq(self) -> SeqModelConfig:
        return self._build(SeqModelConfig)

    def gen(self) -> GenConfig:
        return self._build(GenConfig)

    def dump(self, out_dir: Path) -> None:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "resolved_config.json", "w", encoding="utf-8") as fh:
            json.dump(self.values, fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")


# -- helpers ----------------------------------------------------------------

def _require_file(path, what: str) -> Path:
    if not path:
        raise InputError(f"--{what} is required")
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{what} file not found: {path}")
    return p


def _load_graph(rc: RunConfig, need_labels: bool = False):
    tx_path = _require_file(rc.get("transactions"), "transactions")
    fmt = rc.get("format") or ("jsonl" if tx_path.suffix == ".jsonl" else "csv")
    with open(tx_path, encoding="utf-8") as fh:
        parsed = parse_transactions(fh, fmt)
    if parsed.skipped:
        log.warning("skipped %d malformed transaction records", parsed.skipped)
    labels = {}
    if rc.get("labels") or need_labels:
        with open(_require_file(rc.get("labels"), "labels"), encoding="utf-8") as fh:
            labels = parse_labels(fh)
    return build_graph(parsed.transactions, labels), labels


def _accounts(rc: RunConfig, labels: dict) -> list[str]:
    acc = rc.get("accounts")
    if not acc:
        return sorted(a for a, l in labels.items() if l is not Label.UNLABELED)
    p = Path(acc)
    items = p.read_text(encoding="utf-8").split() if p.is_file() else str(acc).split(",")
    return [canonical_address(a) for a in items if a.strip()]


def _out(rc: RunConfig) -> Path:
    out = Path(rc.get("out") or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_model(rc: RunConfig) -> Model:
    ck = _require_file(rc.get("checkpoint"), "checkpoint")
    try:
        return Model.load(ck)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise InputError(f"checkpoint unusable: {exc}") from exc


def _json_dump(obj, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- commands ---------------------------------------------------------------

def cmd_gen(rc: RunConfig) -> None:
    out = _out(rc)
    paths = gen_dataset(rc.gen(), out, rc.get("format") or "csv")
    log.info("wrote %s and %s", paths["transactions"], paths["labels"])


def cmd_ingest(rc: RunConfig) -> None:
    tx_path = _require_file(rc.get("transactions"), "transactions")
    fmt = rc.get("format") or ("jsonl" if tx_path.suffix == ".jsonl" else "csv")
    with open(tx_path, encoding="utf-8") as fh:
        parsed = parse_transactions(fh, fmt, strict=bool(rc.get("strict")))
    labels = {}
    if rc.get("labels"):
        with open(_require_file(rc.get("labels"), "labels"), encoding="utf-8") as fh:
            labels = parse_labels(fh)
    g = build_graph(parsed.transactions, labels)
    out = _out(rc)
    with open(out / "transactions.csv", "w", encoding="utf-8", newline="") as fh:
        write_transactions_csv(g.edges, fh)
    with open(out / "labels.csv", "w", encoding="utf-8", newline="") as fh:
        write_labels(labels, fh)
    _json_dump({
        "records": len(parsed.transactions),
        "skipped": parsed.skipped,
        "errors": [{"line": e.line, "reason": e.reason} for e in parsed.errors],
        "nodes": len(g),
        "edges": g.num_edges,
        "labeled": len(labels),
    }, out / "ingest_report.json")


def cmd_stats(rc: RunConfig) -> None:
    g, labels = _load_graph(rc)
    out = _out(rc)
    st = degree_stats(g)
    doc = st.to_json()
    doc["labels"] = {lab.value: sum(1 for l in labels.values() if l is lab) for lab in Label if lab is not Label.UNLABELED}
    _json_dump(doc, out / "stats.json")
    degrees = sorted(set(st.in_histogram) | set(st.out_histogram))
    with open(out / "degree_histogram.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["degree", "in_frequency", "out_frequency"])
        for d in degrees:
            w.writerow([d, st.in_histogram.get(d, 0), st.out_histogram.get(d, 0)])


def cmd_sample(rc: RunConfig) -> None:
    g, labels = _load_graph(rc)
    wc = rc.walk()
    out = _out(rc) / "samples"
    out.mkdir(parents=True, exist_ok=True)
    n = 0
    for addr in _accounts(rc, labels):
        if addr not in g:
            log.warning("account %s has no transactions; skipped", addr)
            continue
        s = sample_account(g, addr, wc, full=bool(rc.get("full")))
        with open(out / f"{addr}.jsonl", "w", encoding="utf-8") as fh:
            write_sampled_graph(s, fh)
        n += 1
    log.info("wrote %d sampled graphs", n)


def cmd_train(rc: RunConfig) -> None:
    g, labels = _load_graph(rc, need_labels=True)
    wc, fc, sc = rc.walk(), rc.features(), rc.seq()
    labs = {a: l for a, l in labels.items() if l is not Label.UNLABELED}
    if len({int(l.is_malicious) for l in labs.values()}) < 2:
        raise SingleClassDataset("SingleClassDataset: labels must contain both normal and malicious accounts")
    split = split_accounts(labs, sc.seed)
    out = _out(rc)
    _json_dump(split.to_json(), out / "split.json")
    examples = {ex.address: ex for ex in build_examples(g, sorted(labs), wc, labs)}
    result = train([examples[a] for a in split.train], sc, fc,
                   val_set=[examples[a] for a in split.val] or None, log=log.info)
    result.model.save(out / "checkpoint.json", meta={"walk_config": {**asdict(wc), "variant": wc.variant.value},
                                                     "best_epoch": result.best_epoch})
    with open(out / "history.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "val_weighted_f1"])
        for r in result.history:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.val_weighted_f1)])


def _walk_from_checkpoint(rc: RunConfig) -> WalkConfig:
    _, meta = nn.load_checkpoint(_require_file(rc.get("checkpoint"), "checkpoint"))
    base = dict(meta.get("walk_config") or {})
    for k in ("window", "interval_days", "walk_length", "variant", "seed"):
        if k in rc.values:
            base[k] = rc.values[k]
    if "variant" in base:
        base["variant"] = TemporalVariant(base["variant"])
    return WalkConfig(**base)


def cmd_eval(rc: RunConfig) -> None:
    model = _load_model(rc)
    g, labels = _load_graph(rc, need_labels=True)
    wc = _walk_from_checkpoint(rc)
    split_path = rc.get("split") or Path(rc.get("checkpoint")).parent / "split.json"
    if not Path(split_path).is_file():
        raise InputError(f"split file not found: {split_path}")
    split = Split(**json.loads(Path(split_path).read_text(encoding="utf-8")))
    accounts = split.test
    missing = [a for a in accounts if a not in labels]
    if missing:
        raise InputError(f"{len(missing)} test accounts lack labels")
    examples = build_examples(g, accounts, wc, labels)
    preds = label_from_scores(predict_scores(model, examples))
    doc = report(confusion(preds, [ex.label for ex in examples]))
    _json_dump(doc, _out(rc) / "metrics.json")


def cmd_detect(rc: RunConfig) -> None:
    model = _load_model(rc)
    g, labels = _load_graph(rc)
    wc = _walk_from_checkpoint(rc)
    accounts = _accounts(rc, labels)
    if not accounts:
        raise InputError("no accounts to score (give --accounts or a labels file)")
    dets = detect(model, g, accounts, wc, full=bool(rc.get("full")))
    with open(_out(rc) / "detections.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["address", "label", "score"])
        for d in dets:
            w.writerow([d.address, "malicious" if d.label else "normal", repr(d.score)])


def cmd_export(rc: RunConfig) -> None:
    model = _load_model(rc)
    g, labels = _load_graph(rc)
    wc = _walk_from_checkpoint(rc)
    out = _out(rc) / "embeddings"
    out.mkdir(parents=True, exist_ok=True)
    for addr in _accounts(rc, labels):
        if addr not in g:
            continue
        seq = account_sequence(g, addr, wc)
        phi = encode_sequence(seq, model.encoder_params, model.feat_cfg).data
        np.savetxt(out / f"{addr}.csv", phi, delimiter=",", fmt="%.17g")
        _json_dump({"account": addr, "m": int(phi.shape[0]), "D": int(phi.shape[1]), "k": wc.interval_days,
                    "t_first": seq.t_first}, out / f"{addr}.json")


def cmd_fetch(rc: RunConfig) -> None:
    if not rc.get("base_url"):
        raise InputError("--base-url is required")
    seeds = rc.get("seeds")
    if not seeds:
        raise InputError("--seeds is required")
    p = Path(str(seeds))
    raw = p.read_text(encoding="utf-8").split() if p.is_file() else str(seeds).split(",")
    try:
        seed_set = {canonical_address(s) for s in raw if s.strip()}
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    fkw = {k: rc.get(k) for k in ("requests_per_second", "query_timeout", "max_retries", "page_size", "workers")
           if rc.get(k) is not None}
    cfg = FetchConfig.from_env(rc.get("base_url"), **fkw)
    spec = CrawlSpec(seed_set, depth=int(rc.get("depth", 2)),
                     block_range=(int(rc.get("start_block", 0)), int(rc.get("end_block", 99_999_999))),
                     per_node_tx_cap=int(rc.get("per_node_tx_cap", 10_000)))
    res = crawl_neighborhood(cfg, spec)
    out = _out(rc)
    with open(out / "transactions.csv", "w", encoding="utf-8", newline="") as fh:
        write_transactions_csv(res.transactions, fh)
    _json_dump({"visited": len(res.visited), "transactions": len(res.transactions), "errors": res.errors},
               out / "crawl_report.json")


COMMANDS = {
    "fetch": (cmd_fetch, "crawl account transactions from an Etherscan-compatible API"),
    "ingest": (cmd_ingest, "parse and normalise a transaction dump"),
    "stats": (cmd_stats, "degree statistics of the transaction graph"),
    "sample": (cmd_sample, "write structure-temporal walk samples per account"),
    "gen": (cmd_gen, "generate a labeled synthetic corpus"),
    "train": (cmd_train, "train the detector"),
    "eval": (cmd_eval, "evaluate a checkpoint on the persisted test split"),
    "detect": (cmd_detect, "score accounts with a checkpoint"),
    "export-embeddings": (cmd_export, "write per-account interval embedding matrices"),
}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat YAML/JSON key-value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--window", type=int, choices=[5, 10, 15])
    p.add_argument("--interval-days", type=int, dest="interval_days")
    p.add_argument("--walk-length", type=int, dest="walk_length")
    p.add_argument("--variant", choices=["min", "max"])
    p.add_argument("--ablate", choices=["graph", "transpose"])
    p.add_argument("--transactions")
    p.add_argument("--labels")
    p.add_argument("--format", choices=["csv", "jsonl"])
    p.add_argument("--checkpoint")
    p.add_argument("--split")
    p.add_argument("--accounts", help="comma-separated addresses or a file of addresses")
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--full", action="store_true", default=None, help="use the whole graph instead of walk samples")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_specific(name: str, p: argparse.ArgumentParser) -> None:
    if name == "ingest":
        p.add_argument("--strict", action="store_true", default=None)
    if name == "gen":
        for key in ("n_normal", "n_scam", "n_phishing", "pool_size", "background_tx", "timeline_days"):
            p.add_argument("--" + key.replace("_", "-"), type=int, dest=key)
    if name == "fetch":
        p.add_argument("--base-url", dest="base_url")
        p.add_argument("--seeds", help="comma-separated seed addresses or a file")
        p.add_argument("--depth", type=int)
        p.add_argument("--start-block", type=int, dest="start_block")
        p.add_argument("--end-block", type=int, dest="end_block")
        p.add_argument("--per-node-tx-cap", type=int, dest="per_node_tx_cap")
        p.add_argument("--requests-per-second", type=float, dest="requests_per_second")
        p.add_argument("--query-timeout", type=float, dest="query_timeout")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="txscam", description="Transaction-graph scam account detection toolkit")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_, description=help_)
        _add_common(p)
        _add_specific(name, p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    fn = COMMANDS[args.command][0]
    try:
        rc = RunConfig.load(args.config)
        skip = {"config", "command", "verbose"}
        for key, value in vars(args).items():
            if key not in skip:
                rc.set(key, value)
        rc.values.setdefault("seed", 0)
        log.info("command=%s effective seed=%d", args.command, rc.values["seed"])
        fn(rc)
        rc.dump(_out(rc))
    except (InputError, UnreadableInput, MalformedRecord, SingleClassDataset, ConflictingFlags,
            InvalidPhaseConfig, nn.ShapeMismatch, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except (TypeError, ValueError) as exc:
        log.error("invalid configuration: %s", exc)
        return EXIT_INPUT
    except FetchError as exc:
        log.error("fetch failed: %s", exc)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        log.exception("runtime failure: %s", exc)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
