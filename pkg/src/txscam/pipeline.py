"""Glue from a transaction graph to model-ready examples, splits and detections."""
from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .encoder import sequence_features
from .seqmodel import Example, Model, label_from_scores, predict_scores
from .strwalk import SampledGraph, SubgraphSequence, WalkConfig, make_rng, slice_subgraph_sequence, strwalk, whole_neighborhood
from .txgraph import Label, TemporalMultiDiGraph


def sample_account(g: TemporalMultiDiGraph, addr: str, cfg: WalkConfig, full: bool = False) -> SampledGraph:
    if full:
        return whole_neighborhood(g, addr, cfg.interval_days)
    return strwalk(g, addr, cfg, make_rng(cfg.seed, addr))


def account_sequence(g: TemporalMultiDiGraph, addr: str, cfg: WalkConfig, full: bool = False) -> SubgraphSequence:
    return slice_subgraph_sequence(sample_account(g, addr, cfg, full), cfg.interval_days)


def label_target(label: Label) -> int:
    if label is Label.UNLABELED:
        raise ValueError("unlabeled account has no training target")
    return int(label.is_malicious)


def build_examples(g: TemporalMultiDiGraph, accounts, cfg: WalkConfig, labels=None,
                   full: bool = False) -> list[Example]:
    """One example per account; accounts absent from the graph get a single empty interval."""
    out = []
    for addr in accounts:
        target = label_target(labels[addr]) if labels is not None else 0
        if addr in g:
            feats = sequence_features(account_sequence(g, addr, cfg, full))
        else:
            feats = [None]
        out.append(Example(addr, feats, target))
    return out


def labeled_accounts(g: TemporalMultiDiGraph) -> dict[str, Label]:
    return {a: l for a, l in sorted(g.labels.items()) if l is not Label.UNLABELED}


@dataclass
class Split:
    train: list[str]
    val: list[str]
    test: list[str]

    def to_json(self) -> dict:
        return {"train": self.train, "val": self.val, "test": self.test}


def split_accounts(labels: dict[str, Label], seed: int, fractions=(0.7, 0.2, 0.1)) -> Split:
    """Seeded per-class shuffle into train/val/test by ``fractions``."""
    rng = make_rng(seed, "split")
    parts = ([], [], [])
    by_class: dict[int, list[str]] = {}
    for a in sorted(labels):
        by_class.setdefault(label_target(labels[a]), []).append(a)
    for cls in sorted(by_class):
        members = by_class[cls]
        order = [members[i] for i in rng.permutation(len(members))]
        n = len(order)
        n_train = int(round(fractions[0] * n))
        n_val = int(round(fractions[1] * n))
        parts[0].extend(order[:n_train])
        parts[1].extend(order[n_train:n_train + n_val])
        parts[2].extend(order[n_train + n_val:])
    return Split(*(sorted(p) for p in parts))


@dataclass
class Detection:
    address: str
    label: int
    score: float


def detect(model: Model, g: TemporalMultiDiGraph, accounts, cfg: WalkConfig, full: bool = False) -> list[Detection]:
    examples = build_examples(g, accounts, cfg, full=full)
    scores = predict_scores(model, examples)
    labels = label_from_scores(scores)
    return [Detection(ex.address, int(l), float(s)) for ex, l, s in zip(examples, labels, scores)]


def timed_detect(model: Model, g, accounts, cfg: WalkConfig, full: bool) -> tuple[list[Detection], float]:
    t0 = time.perf_counter()
    res = detect(model, g, accounts, cfg, full)
    return res, time.perf_counter() - t0


def walk_config_for(cfg: WalkConfig, **overrides) -> WalkConfig:
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
