"""Labeled synthetic transaction networks with class-specific signatures.

Counterparties come from a shared background pool whose activity weights are
power-law distributed, so normal, scam and phishing seeds all trade with the
same population. The class signatures are deliberately learnable; this is a
test scaffold, not a model of real-world difficulty.

* normal: half incoming, half outgoing transfers spread uniformly over the timeline
* web3 scam: a short balanced mimic phase, then a harvest phase where many
  distinct victims pay in and the seed forwards more transfers than it
  received to a handful of concentrator addresses. With ``fresh_victims``
  each victim is a new wallet funded from the pool just before it pays.
* phishing: a few counterparties per interval with many repeated transfers
  each, closed by one consolidation transfer out
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .strwalk import SECONDS_PER_DAY, make_rng
from .txgraph import Label, Transaction, write_labels, write_transactions_csv, write_transactions_jsonl

WEI = 10**18


class InvalidPhaseConfig(ValueError):
    pass


@dataclass(frozen=True)
class GenConfig:
    n_normal: int = 10
    n_scam: int = 10
    n_phishing: int = 0
    timeline_days: int = 364
    interval_days: int = 7
    start_time: int = 1_600_000_000
    pool_size: int = 2000
    background_tx: int = 4000
    powerlaw_exponent: float = 2.2
    normal_tx: int = 40
    mimic_intervals: int = 4
    harvest_intervals: int = 6
    victims_per_interval: int = 12
    concentrators: int = 3
    out_per_in: float = 1.3
    phishing_intervals: int = 6
    phishing_partners: int = 2
    phishing_tx_per_pair: int = 6
    fresh_victims: bool = True
    seed: int = 0

    def validate(self) -> None:
        if self.mimic_intervals < 1 or self.harvest_intervals < 1 or self.phishing_intervals < 1:
            raise InvalidPhaseConfig("phase interval counts must be >= 1")
        if self.timeline_days < self.interval_days or self.interval_days < 1:
            raise ValueError("timeline must cover at least one interval")
        if min(self.n_normal, self.n_scam, self.n_phishing, self.normal_tx, self.background_tx) < 0:
            raise ValueError("counts must be non-negative")
        if self.concentrators < 1 or self.phishing_partners < 1 or self.pool_size < 1:
            raise ValueError("concentrators, phishing_partners and pool_size must be >= 1")
        if self.powerlaw_exponent <= 1:
            raise ValueError("powerlaw_exponent must exceed 1")


class _Addresses:
    """Collision-free random address source shared across a whole corpus."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.used: set[str] = set()

    def new(self) -> str:
        while True:
            a = "0x" + self.rng.bytes(20).hex()
            if a not in self.used:
                self.used.add(a)
                return a


class Background:
    """Shared counterparty pool with power-law activity weights."""

    def __init__(self, cfg: GenConfig, rng: np.random.Generator, addrs: _Addresses):
        self.cfg = cfg
        self.addresses = [addrs.new() for _ in range(cfg.pool_size)]
        u = rng.random(cfg.pool_size)
        w = (1.0 - u) ** (-1.0 / (cfg.powerlaw_exponent - 1.0))
        self.weights = w / w.sum()

    def pick(self, rng, size: int, replace: bool = True) -> list[str]:
        if size == 0:
            return []
        idx = rng.choice(len(self.addresses), size=size, replace=replace, p=self.weights)
        return [self.addresses[i] for i in np.atleast_1d(idx)]

    def transactions(self, rng, counter) -> list[Transaction]:
        cfg = self.cfg
        n = cfg.background_tx
        if n == 0 or len(self.addresses) < 2:
            return []
        src = rng.choice(len(self.addresses), size=n, p=self.weights)
        dst = rng.choice(len(self.addresses), size=n, p=self.weights)
        ts = rng.integers(0, cfg.timeline_days * SECONDS_PER_DAY, size=n)
        out = []
        for s, d, t in zip(src, dst, ts):
            if s == d:
                d = (d + 1) % len(self.addresses)
            out.append(_tx(counter, self.addresses[s], self.addresses[d], _amount(rng, 0.5), cfg.start_time + int(t)))
        return out


class _Counter:
    def __init__(self, prefix: str):
        self.prefix = prefix
        self.n = 0

    def next(self) -> str:
        self.n += 1
        return f"{self.prefix}{self.n:08d}"


def _amount(rng, scale_ether: float) -> int:
    return int(rng.lognormal(math.log(scale_ether), 0.6) * WEI)


def _tx(counter: _Counter, sender: str, receiver: str, value: int, ts: int) -> Transaction:
    return Transaction(
        hash="0x" + counter.next(),
        sender=sender, receiver=receiver, value=max(0, int(value)),
        timestamp=int(ts), block=max(0, (int(ts) - 1_438_269_973) // 13),
    )


def _span_start(cfg: GenConfig, rng, n_intervals: int) -> int:
    span = n_intervals * cfg.interval_days
    slack = max(0, cfg.timeline_days - span)
    return cfg.start_time + int(rng.integers(0, slack + 1)) * SECONDS_PER_DAY


def gen_normal(cfg: GenConfig, rng: np.random.Generator, pool: Background | None = None,
               addrs: _Addresses | None = None, counter: _Counter | None = None) -> tuple[list[Transaction], str]:
    """Balanced seed: ``normal_tx // 2`` incoming and the rest outgoing."""
    cfg.validate()
    addrs = addrs or _Addresses(rng)
    pool = pool or Background(cfg, rng, addrs)
    counter = counter or _Counter("n")
    seed = addrs.new()
    n = cfg.normal_tx
    n_in = n // 2
    partners = pool.pick(rng, n)
    ts = np.sort(rng.integers(0, cfg.timeline_days * SECONDS_PER_DAY, size=n))
    incoming = np.zeros(n, dtype=bool)
    incoming[rng.permutation(n)[:n_in]] = True
    txs = []
    for p, t, inc in zip(partners, ts, incoming):
        v = _amount(rng, 0.8)
        a, b = (p, seed) if inc else (seed, p)
        txs.append(_tx(counter, a, b, v, cfg.start_time + int(t)))
    return txs, seed


def gen_scam(cfg: GenConfig, rng: np.random.Generator, pool: Background | None = None,
             addrs: _Addresses | None = None, counter: _Counter | None = None) -> tuple[list[Transaction], str]:
    cfg.validate()
    addrs = addrs or _Addresses(rng)
    pool = pool or Background(cfg, rng, addrs)
    counter = counter or _Counter("s")
    seed = addrs.new()
    k = cfg.interval_days * SECONDS_PER_DAY
    t0 = _span_start(cfg, rng, cfg.mimic_intervals + cfg.harvest_intervals)
    txs = []
    # mimic: small, balanced two-way traffic
    for i in range(cfg.mimic_intervals):
        partners = pool.pick(rng, 4)
        for j, p in enumerate(partners):
            t = t0 + i * k + int(rng.integers(0, k))
            a, b = (p, seed) if j % 2 == 0 else (seed, p)
            txs.append(_tx(counter, a, b, _amount(rng, 0.02), t))
    # harvest: many distinct victims in, funnelled out to few concentrators
    concentrators = [addrs.new() for _ in range(cfg.concentrators)]
    n_victims = cfg.victims_per_interval * cfg.harvest_intervals
    if cfg.fresh_victims:
        victims = [addrs.new() for _ in range(n_victims)]
    else:
        victims = pool.pick(rng, min(n_victims, len(pool.addresses)), replace=False)
    h0 = t0 + cfg.mimic_intervals * k
    for i in range(cfg.harvest_intervals):
        chunk = victims[i * cfg.victims_per_interval:(i + 1) * cfg.victims_per_interval]
        received = 0
        for v in chunk:
            amt = _amount(rng, 1.5)
            received += amt
            t = h0 + i * k + 1 + int(rng.integers(0, k - 1))
            if cfg.fresh_victims:
                funder = pool.pick(rng, 1)[0]
                txs.append(_tx(counter, funder, v, amt + _amount(rng, 0.05), t - 1))
            txs.append(_tx(counter, v, seed, amt, t))
        n_out = math.ceil(cfg.out_per_in * len(chunk))
        for j in range(n_out):
            c = concentrators[int(rng.integers(0, len(concentrators)))]
            txs.append(_tx(counter, seed, c, received // max(1, n_out), h0 + i * k + int(rng.integers(0, k))))
    return txs, seed


def gen_phishing(cfg: GenConfig, rng: np.random.Generator, pool: Background | None = None,
                 addrs: _Addresses | None = None, counter: _Counter | None = None) -> tuple[list[Transaction], str]:
    cfg.validate()
    addrs = addrs or _Addresses(rng)
    pool = pool or Background(cfg, rng, addrs)
    counter = counter or _Counter("p")
    seed = addrs.new()
    k = cfg.interval_days * SECONDS_PER_DAY
    t0 = _span_start(cfg, rng, cfg.phishing_intervals)
    txs = []
    total = 0
    for i in range(cfg.phishing_intervals):
        for p in pool.pick(rng, cfg.phishing_partners, replace=False):
            for _ in range(cfg.phishing_tx_per_pair):
                amt = _amount(rng, 0.7)
                total += amt
                txs.append(_tx(counter, p, seed, amt, t0 + i * k + int(rng.integers(0, k - 1))))
    last = max(t.timestamp for t in txs)
    end = t0 + cfg.phishing_intervals * k - 1
    txs.append(_tx(counter, seed, addrs.new(), total, min(end, last + 1)))
    return txs, seed


@dataclass
class Corpus:
    transactions: list[Transaction]
    labels: dict[str, Label]
    pool: list[str]


def gen_corpus(cfg: GenConfig) -> Corpus:
    cfg.validate()
    rng = make_rng(cfg.seed, "synthgen")
    addrs = _Addresses(rng)
    pool = Background(cfg, rng, addrs)
    txs = pool.transactions(rng, _Counter("b"))
    labels: dict[str, Label] = {}
    counter = _Counter("a")
    plan = [(gen_normal, Label.NORMAL, cfg.n_normal), (gen_scam, Label.WEB3SCAM, cfg.n_scam),
            (gen_phishing, Label.PHISHING, cfg.n_phishing)]
    for fn, label, count in plan:
        for _ in range(count):
            seed_txs, seed = fn(cfg, rng, pool, addrs, counter)
            txs.extend(seed_txs)
            labels[seed] = label
    txs.sort(key=lambda t: (t.timestamp, t.hash))
    return Corpus(txs, labels, pool.addresses)


def gen_dataset(cfg: GenConfig, out_dir, fmt: str = "csv") -> dict[str, Path]:
    """Write ``transactions.{csv,jsonl}`` and ``labels.csv`` into ``out_dir``."""
    corpus = gen_corpus(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tx_path = out / f"transactions.{fmt}"
    with open(tx_path, "w", encoding="utf-8", newline="") as fh:
        if fmt == "csv":
            write_transactions_csv(corpus.transactions, fh)
        elif fmt == "jsonl":
            write_transactions_jsonl(corpus.transactions, fh)
        else:
            raise ValueError(f"unsupported format {fmt!r}")
    label_path = out / "labels.csv"
    with open(label_path, "w", encoding="utf-8", newline="") as fh:
        write_labels(corpus.labels, fh)
    return {"transactions": tx_path, "labels": label_path}
