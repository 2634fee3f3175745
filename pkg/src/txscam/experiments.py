"""Reusable experiment drivers shared by scripts/ and the acceptance suite."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .encoder import FeatureConfig
from .evaluate import Metrics, confusion, metrics
from .pipeline import build_examples, labeled_accounts, split_accounts, timed_detect
from .seqmodel import Model, SeqModelConfig, label_from_scores, predict_scores, train
from .strwalk import SECONDS_PER_DAY, WalkConfig, strwalk, make_rng
from .synthgen import GenConfig, gen_corpus
from .txgraph import Transaction, build_graph


@dataclass
class DetectionConfig:
    corpus: GenConfig = field(default_factory=lambda: GenConfig(n_normal=200, n_scam=200))
    walk: WalkConfig = field(default_factory=lambda: WalkConfig(window=10, interval_days=7))
    model: SeqModelConfig = field(default_factory=lambda: SeqModelConfig(epochs=30))
    features: FeatureConfig = field(default_factory=FeatureConfig)
    split_seed: int = 0


@dataclass
class DetectionResult:
    test: Metrics
    best_epoch: int
    seconds: float
    history: list


def prepare(cfg: DetectionConfig):
    """Corpus, graph, labels, split and per-account examples."""
    corpus = gen_corpus(cfg.corpus)
    g = build_graph(corpus.transactions, corpus.labels)
    labels = labeled_accounts(g)
    split = split_accounts(labels, cfg.split_seed)
    examples = {ex.address: ex for ex in build_examples(g, list(labels), cfg.walk, labels)}
    return g, labels, split, examples


def run_detection(cfg: DetectionConfig, prepared=None, log=None) -> DetectionResult:
    t0 = time.perf_counter()
    _, _, split, examples = prepared or prepare(cfg)
    tr = [examples[a] for a in split.train]
    va = [examples[a] for a in split.val]
    te = [examples[a] for a in split.test]
    res = train(tr, cfg.model, cfg.features, val_set=va, log=log)
    preds = label_from_scores(predict_scores(res.model, te))
    m = metrics(confusion(preds, [ex.label for ex in te]))
    return DetectionResult(m, res.best_epoch, time.perf_counter() - t0, res.history)


def run_ablation(cfg: DetectionConfig, seeds=(0, 1, 2), log=None) -> dict[str | None, list[float]]:
    """Test weighted F1 per variant and model seed on one fixed corpus and split."""
    prepared = prepare(cfg)
    out: dict[str | None, list[float]] = {None: [], "graph": [], "transpose": []}
    for seed in seeds:
        for ablate in out:
            mc = replace(cfg.model, ablate=ablate, seed=seed)
            r = run_detection(replace(cfg, model=mc), prepared)
            out[ablate].append(r.test.weighted_f1)
            if log:
                log(f"seed={seed} ablate={ablate} weighted_f1={r.test.weighted_f1:.4f}")
    return out


def dense_neighborhood(n_edges: int = 12_000, n_partners: int = 400, days: int = 364, seed: int = 0,
                       start_time: int = 1_600_000_000) -> tuple[list[Transaction], str]:
    """A single busy account whose partners also trade among themselves."""
    rng = make_rng(seed, "dense")
    center = "0x" + "c" * 40
    partners = ["0x" + rng.bytes(20).hex() for _ in range(n_partners)]
    txs = []
    for i in range(n_edges):
        t = start_time + int(rng.integers(0, days * SECONDS_PER_DAY))
        a = partners[int(rng.integers(n_partners))]
        if i % 2 == 0:
            b = center
        else:
            b = partners[int(rng.integers(n_partners))]
            if b == a:
                b = center
        if rng.random() < 0.5:
            a, b = b, a
        txs.append(Transaction(f"0xd{i:09d}", a, b, int(rng.integers(1, 10**18)), t, i))
    return txs, center


@dataclass
class RuntimeComparison:
    full_edges: int
    sampled_edges: int
    full_seconds: float
    sampled_seconds: float

    @property
    def speedup(self) -> float:
        return self.full_seconds / self.sampled_seconds

    @property
    def edge_fraction(self) -> float:
        return self.sampled_edges / self.full_edges


def runtime_reduction(n_edges: int = 12_000, window: int = 5, repeats: int = 3, seed: int = 0) -> RuntimeComparison:
    """Detection time on the whole neighborhood versus its walk sample.

    Times are the best of ``repeats`` runs and include sampling or slicing.
    """
    txs, center = dense_neighborhood(n_edges, seed=seed)
    g = build_graph(txs)
    wc = WalkConfig(window=window, interval_days=7, seed=seed)
    model = Model(FeatureConfig(), SeqModelConfig(seed=seed))
    sampled = strwalk(g, center, wc)
    full_t = min(timed_detect(model, g, [center], wc, full=True)[1] for _ in range(repeats))
    samp_t = min(timed_detect(model, g, [center], wc, full=False)[1] for _ in range(repeats))
    return RuntimeComparison(g.num_edges, len(sampled.edges), full_t, samp_t)


def summarize(values: list[float]) -> tuple[float, float]:
    a = np.asarray(values, dtype=np.float64)
    return float(a.mean()), float(a.std())
