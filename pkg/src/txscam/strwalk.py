"""Structure-temporal random walk sampling over a transaction multigraph.

Each walk step picks the next account from the current node's incident
transfers with probability proportional to a time-offset weight; every node
reached is then enriched with up to ``w`` uniformly drawn transfers from its
first ``k`` days of activity. The union of those draws is the sampled graph,
which is later cut into ``k``-day interval subgraphs.

Randomness goes through ``numpy.random.Generator(Philox)``, a counter-based
bit generator whose streams are identical across platforms.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np

from .txgraph import TemporalMultiDiGraph, Transaction, UnknownNode, window_edge_indices

SECONDS_PER_DAY = 86_400


class EmptyOrZeroWeights(ValueError):
    pass


class EmptyTimestamps(ValueError):
    pass


class NegativeOffset(ValueError):
    pass


def make_rng(seed: int, *keys: int | str) -> np.random.Generator:
    """Philox generator keyed by a global seed plus optional stream keys.

    Addresses are folded in as integers, so a per-account stream does not
    depend on the order in which accounts are processed.
    """
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for k in keys:
        if isinstance(k, str):
            k = int(k[2:], 16) if k.startswith("0x") else int.from_bytes(k.encode(), "little")
        words.append(int(k))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


@dataclass(frozen=True)
class AliasTable:
    prob: np.ndarray
    alias: np.ndarray

    @property
    def n(self) -> int:
        return len(self.prob)

    def sample(self, rng: np.random.Generator, size: int | None = None):
        if size is None:
            i = int(rng.integers(self.n))
            return i if rng.random() < self.prob[i] else int(self.alias[i])
        i = rng.integers(self.n, size=size)
        u = rng.random(size)
        return np.where(u < self.prob[i], i, self.alias[i])

    def probabilities(self) -> np.ndarray:
        """Exact distribution encoded by the table."""
        p = self.prob / self.n
        out = p.copy()
        np.add.at(out, self.alias, (1.0 - self.prob) / self.n)
        return out


def build_alias(weights) -> AliasTable:
    """Vose's alias construction, O(n)."""
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.size == 0 or not np.all(np.isfinite(w)) or np.any(w < 0) or not np.any(w > 0):
        raise EmptyOrZeroWeights("weights must be finite, non-negative and not all zero")
    n = w.size
    scaled = (w / w.sum()) * n
    prob = np.zeros(n)
    alias = np.arange(n, dtype=np.int64)
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    while small and large:
        s = small.pop()
        l = large.pop()
        prob[s] = scaled[s]
        alias[s] = l
        scaled[l] = (scaled[l] + scaled[s]) - 1.0
        (small if scaled[l] < 1.0 else large).append(l)
    # leftovers are 1 up to rounding
    for i in large + small:
        prob[i] = 1.0
        alias[i] = i
    return AliasTable(prob, alias)


class TemporalVariant(enum.Enum):
    MIN_ANCHORED = "min"
    MAX_ANCHORED = "max"


def temporal_step_weights(timestamps, variant: TemporalVariant = TemporalVariant.MIN_ANCHORED) -> np.ndarray:
    t = np.asarray(timestamps, dtype=np.int64)
    if t.size == 0:
        raise EmptyTimestamps("no timestamps")
    if variant is TemporalVariant.MIN_ANCHORED:
        mu = t - t.min() + 1
    else:
        mu = t.max() - t + 1
    mu = mu.astype(np.float64)
    return mu / mu.sum()


def interval_index(t: int, t_first: int, k: int) -> int:
    if k < 1:
        raise ValueError("k must be >= 1")
    if t < t_first:
        raise NegativeOffset(f"timestamp {t} precedes t_first {t_first}")
    return (int(t) - int(t_first)) // (SECONDS_PER_DAY * int(k))


@dataclass(frozen=True)
class WalkConfig:
    window: int = 10
    interval_days: int = 7
    walk_length: int = 40
    variant: TemporalVariant = TemporalVariant.MIN_ANCHORED
    seed: int = 0

    def __post_init__(self):
        if self.window < 1 or self.interval_days < 1 or self.walk_length < 1:
            raise ValueError("window, interval_days and walk_length must be >= 1")


def structure_sample(g: TemporalMultiDiGraph, v: str, w: int, k: int,
                     rng: np.random.Generator) -> tuple[set[str], list[int]]:
    """Uniformly draw ``w`` transfers (with replacement, then deduplicated) from
    the first ``k`` days of ``v``'s activity, returning drawn edges and the
    accounts on their far side."""
    inc = g.incident_edges(v)
    if len(inc) == 0:
        return set(), []
    sigma = int(g.ts[inc[0]])
    cand = window_edge_indices(g, v, sigma, sigma + SECONDS_PER_DAY * k)
    if len(cand) <= w:
        picked = [int(e) for e in cand]
    else:
        table = build_alias(np.full(len(cand), 1.0 / len(cand)))
        draws = table.sample(rng, size=w)
        picked = sorted({int(cand[i]) for i in draws})
    vi = g.node_id(v)
    nodes = {g.address(g.opposite(e, vi)) for e in picked}
    return nodes, picked


@dataclass
class SampledGraph:
    start: str
    t_first: int | None
    nodes: set[str]
    edges: list[tuple[Transaction, int]]
    walk: list[str]
    config: WalkConfig | None = None

    @property
    def num_edges(self) -> int:
        return len(self.edges)


def _tau_edges(g: TemporalMultiDiGraph, edge_idx: Iterable[int], t_first: int | None, k: int):
    out = []
    if t_first is None:
        return out
    for e in sorted(set(edge_idx)):
        t = int(g.ts[e])
        if t < t_first:
            # precedes the account's first activity: no interval to place it in
            continue
        out.append((g.edges[e], interval_index(t, t_first, k)))
    return out


def step(g: TemporalMultiDiGraph, v: str, variant: TemporalVariant,
         rng: np.random.Generator) -> str | None:
    """One temporally weighted move from ``v``; ``None`` at a dead end."""
    inc = g.incident_edges(v)
    if len(inc) == 0:
        return None
    table = build_alias(temporal_step_weights(g.ts[inc], variant))
    e = int(inc[table.sample(rng)])
    return g.address(g.opposite(e, g.node_id(v)))


def strwalk(g: TemporalMultiDiGraph, start: str, cfg: WalkConfig,
            rng: np.random.Generator | None = None) -> SampledGraph:
    if start not in g:
        raise UnknownNode(start)
    if rng is None:
        rng = make_rng(cfg.seed, start)
    inc = g.incident_edges(start)
    t_first = int(g.ts[inc[0]]) if len(inc) else None
    walk = [start]
    nodes, picked = structure_sample(g, start, cfg.window, cfg.interval_days, rng)
    nodes = set(nodes) | {start}
    collected = set(picked)
    for _ in range(1, cfg.walk_length):
        nxt = step(g, walk[-1], cfg.variant, rng)
        if nxt is None:
            break
        walk.append(nxt)
        more_nodes, more_edges = structure_sample(g, nxt, cfg.window, cfg.interval_days, rng)
        nodes.add(nxt)
        nodes |= more_nodes
        collected.update(more_edges)
    return SampledGraph(start, t_first, nodes, _tau_edges(g, collected, t_first, cfg.interval_days), walk, cfg)


def whole_neighborhood(g: TemporalMultiDiGraph, start: str, k: int) -> SampledGraph:
    """Every edge of ``g`` as an unsampled 'sampled graph' for ``start``."""
    if start not in g:
        raise UnknownNode(start)
    inc = g.incident_edges(start)
    t_first = int(g.ts[inc[0]]) if len(inc) else None
    edges = _tau_edges(g, range(g.num_edges), t_first, k)
    nodes = {start}
    for tx, _ in edges:
        nodes.add(tx.sender)
        nodes.add(tx.receiver)
    cfg = WalkConfig(window=1, interval_days=k, walk_length=1)
    return SampledGraph(start, t_first, nodes, edges, [start], cfg)


@dataclass
class Subgraph:
    center: str
    nodes: set[str] = field(default_factory=set)
    edges: list[Transaction] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not self.edges


@dataclass
class SubgraphSequence:
    start: str
    t_first: int | None
    interval_days: int
    intervals: list[Subgraph]

    def __len__(self):
        return len(self.intervals)


def slice_subgraph_sequence(s: SampledGraph, k: int | None = None) -> SubgraphSequence:
    """Group sampled edges by interval index; gaps become explicit empty subgraphs.

    Every interval is centered on the start account, including intervals it
    takes no part in; those encode only the center's own (zero) features.
    """
    if k is None:
        k = s.config.interval_days if s.config else 7
    if not s.edges:
        return SubgraphSequence(s.start, s.t_first, k, [Subgraph(s.start, {s.start}, [])])
    if s.config is not None and k != s.config.interval_days:
        taus = [interval_index(tx.timestamp, s.t_first, k) for tx, _ in s.edges]
    else:
        taus = [tau for _, tau in s.edges]
    m = max(taus) + 1
    buckets: list[list[Transaction]] = [[] for _ in range(m)]
    for (tx, _), tau in zip(s.edges, taus):
        buckets[tau].append(tx)
    intervals = []
    for edges in buckets:
        if not edges:
            intervals.append(Subgraph(s.start, set(), []))
            continue
        edges.sort(key=lambda t: (t.timestamp, t.hash))
        members = {a for tx in edges for a in (tx.sender, tx.receiver)}
        intervals.append(Subgraph(s.start, members, edges))
    return SubgraphSequence(s.start, s.t_first, k, intervals)


def write_sampled_graph(s: SampledGraph, stream: TextIO) -> None:
    cfg = s.config or WalkConfig()
    header = {"start": s.start, "t_first": s.t_first, "k": cfg.interval_days, "w": cfg.window,
              "xi": cfg.walk_length, "seed": cfg.seed, "variant": cfg.variant.value, "walk": s.walk}
    stream.write(json.dumps(header) + "\n")
    for tx, tau in sorted(s.edges, key=lambda x: (x[0].timestamp, x[0].hash)):
        rec = {"from": tx.sender, "to": tx.receiver, "value": tx.value,
               "timestamp": tx.timestamp, "tau": tau, "hash": tx.hash, "block": tx.block}
        stream.write(json.dumps(rec) + "\n")


def read_sampled_graph(stream: TextIO) -> SampledGraph:
    lines = [ln for ln in stream.read().splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty sampled graph file")
    head = json.loads(lines[0])
    cfg = WalkConfig(window=head["w"], interval_days=head["k"], walk_length=head["xi"],
                     variant=TemporalVariant(head.get("variant", "min")), seed=head["seed"])
    edges, nodes = [], {head["start"]}
    for ln in lines[1:]:
        r = json.loads(ln)
        tx = Transaction(r.get("hash", ""), r["from"], r["to"], int(r["value"]), int(r["timestamp"]), int(r.get("block", 0)))
        edges.append((tx, int(r["tau"])))
        nodes.update((tx.sender, tx.receiver))
    return SampledGraph(head["start"], head["t_first"], nodes, edges, list(head.get("walk", [head["start"]])), cfg)
