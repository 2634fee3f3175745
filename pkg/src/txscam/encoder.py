"""Directed graph attention encoder for interval subgraphs.

For every interval the center account attends over one slot per incident
transfer (neighbor features concatenated with the projected transfer
features) plus a self slot; the attention-weighted, linearly transformed
slots pass through an ELU to give that interval's embedding row.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import ParamSet, Tensor
from .strwalk import SECONDS_PER_DAY, Subgraph, SubgraphSequence
from .txgraph import Transaction

WEI_PER_ETHER = 10**18
NODE_FEATURES = ("log_in_degree", "log_out_degree", "log_in_value", "log_out_value")
EDGE_FEATURES = ("log_value", "interval_offset", "direction")


class NoNeighbors(ValueError):
    pass


@dataclass(frozen=True)
class FeatureConfig:
    hidden: int = 16
    max_neighbors: int | None = None  # None: pad to the largest slot count in a batch
    leaky_slope: float = 0.01
    elu_alpha: float = 1.0

    @property
    def node_dim(self) -> int:
        return len(NODE_FEATURES)

    @property
    def edge_dim(self) -> int:
        return len(EDGE_FEATURES)

    def __post_init__(self):
        if self.hidden < 1:
            raise ValueError("hidden must be >= 1")
        if self.max_neighbors is not None and self.max_neighbors < 1:
            raise ValueError("max_neighbors must be >= 1")


def _ether(wei: int) -> float:
    return wei / WEI_PER_ETHER


def raw_edge_features(tx: Transaction, t_first: int, k: int, center: str) -> np.ndarray:
    direction = 1.0 if tx.sender == center else -1.0
    return np.array([
        math.log1p(_ether(tx.value)),
        (tx.timestamp - t_first) / (SECONDS_PER_DAY * k),
        direction,
    ])


def raw_node_features(sub: Subgraph, v: str) -> np.ndarray:
    n_in = n_out = 0
    v_in = v_out = 0
    for tx in sub.edges:
        if tx.receiver == v:
            n_in += 1
            v_in += tx.value
        if tx.sender == v:
            n_out += 1
            v_out += tx.value
    return np.array([math.log1p(n_in), math.log1p(n_out), math.log1p(_ether(v_in)), math.log1p(_ether(v_out))])


@dataclass
class SubgraphFeatures:
    """Raw inputs for one interval: center features and per-slot blocks."""
    center: np.ndarray        # (C_v,)
    slot_nodes: np.ndarray    # (n_slots, C_v)
    slot_edges: np.ndarray    # (n_slots, C_e)
    mean_nodes: np.ndarray    # (C_v,) mean raw node features over members


def subgraph_features(sub: Subgraph, t_first: int, k: int) -> SubgraphFeatures:
    c = sub.center
    node_cache: dict[str, np.ndarray] = {}

    def feats(a):
        if a not in node_cache:
            node_cache[a] = raw_node_features(sub, a)
        return node_cache[a]

    slot_nodes, slot_edges = [], []
    for tx in sub.edges:
        if c not in (tx.sender, tx.receiver):
            continue
        other = tx.receiver if tx.sender == c else tx.sender
        slot_nodes.append(feats(other))
        slot_edges.append(raw_edge_features(tx, t_first, k, c))
    members = sorted(sub.nodes) or [c]
    return SubgraphFeatures(
        center=feats(c),
        slot_nodes=np.array(slot_nodes).reshape(-1, len(NODE_FEATURES)),
        slot_edges=np.array(slot_edges).reshape(-1, len(EDGE_FEATURES)),
        mean_nodes=np.mean([feats(a) for a in members], axis=0),
    )


def sequence_features(seq: SubgraphSequence) -> list[SubgraphFeatures | None]:
    """Per-interval raw features; ``None`` marks an empty interval."""
    t0 = seq.t_first if seq.t_first is not None else 0
    return [None if sub.empty else subgraph_features(sub, t0, seq.interval_days) for sub in seq.intervals]


def init_encoder_params(cfg: FeatureConfig, rng: np.random.Generator) -> ParamSet:
    D, cv, ce = cfg.hidden, cfg.node_dim, cfg.edge_dim
    ps = ParamSet()
    ps.add("edge_proj", nn.xavier_uniform(rng, (ce, ce)))
    ps.add("align_w", nn.xavier_uniform(rng, (cv + ce, D)))
    ps.add("align_b", np.zeros(D), weight=False)
    ps.add("score_w", nn.xavier_uniform(rng, (2 * D, 1)))
    ps.add("agg_w", nn.xavier_uniform(rng, (D, D)))
    return ps


def align_neighbors(x_nodes, x_edges, p: ParamSet, slope: float = 0.01) -> Tensor:
    """LeakyReLU([node | projected edge] @ align_w + align_b) per slot."""
    x_nodes, x_edges = nn.as_tensor(x_nodes), nn.as_tensor(x_edges)
    if x_nodes.shape[:-1] != x_edges.shape[:-1]:
        raise nn.ShapeMismatch(f"node block {x_nodes.shape} vs edge block {x_edges.shape}")
    z = nn.concat([x_nodes, x_edges @ p["edge_proj"]], axis=-1)
    return nn.leaky_relu(z @ p["align_w"] + p["align_b"], slope)


def attention_scores(h_i, h_j, p: ParamSet, slope: float = 0.01) -> Tensor:
    """LeakyReLU(score_w . [h_i | h_j]); ``h_i`` broadcasts over the slot axis."""
    h_i, h_j = nn.as_tensor(h_i), nn.as_tensor(h_j)
    if h_i.shape[-1] != h_j.shape[-1] or 2 * h_j.shape[-1] != p["score_w"].shape[0]:
        raise nn.ShapeMismatch(f"score inputs {h_i.shape}, {h_j.shape}")
    if h_i.data.ndim < h_j.data.ndim:
        h_i = nn.broadcast_to(nn.reshape(h_i, h_i.shape[:-1] + (1, h_i.shape[-1])), h_j.shape)
    e = nn.concat([h_i, h_j], axis=-1) @ p["score_w"]
    return nn.leaky_relu(nn.reshape(e, e.shape[:-1]), slope)


def normalize_scores(scores, mask=None) -> Tensor:
    if mask is not None and not np.all(np.any(np.asarray(mask, dtype=bool), axis=-1)):
        raise NoNeighbors("every row needs at least one real slot")
    return nn.softmax(scores, mask=mask, axis=-1)


def aggregate(slots, alpha, p: ParamSet, alpha_param: float = 1.0) -> Tensor:
    """ELU(sum_x alpha_x * (slot_x @ agg_w)) with the self slot included in ``slots``."""
    slots, alpha = nn.as_tensor(slots), nn.as_tensor(alpha)
    if alpha.shape != slots.shape[:-1]:
        raise nn.ShapeMismatch(f"alpha {alpha.shape} vs slots {slots.shape}")
    lead = alpha.shape[:-1]
    pooled = nn.reshape(nn.reshape(alpha, lead + (1, alpha.shape[-1])) @ slots, lead + (slots.shape[-1],))
    return nn.elu(pooled @ p["agg_w"], alpha_param)


def encode_subgraphs(center, slot_nodes, slot_edges, slot_mask, p: ParamSet, cfg: FeatureConfig,
                     return_alpha: bool = False):
    """Batched encoder over S interval subgraphs padded to N slots.

    center: (S, C_v); slot_nodes: (S, N, C_v); slot_edges: (S, N, C_e);
    slot_mask: (S, N) true for real slots. Returns (S, D) embeddings.
    """
    S = center.shape[0]
    zeros_e = np.zeros((S, cfg.edge_dim))
    h_i = align_neighbors(center, zeros_e, p, cfg.leaky_slope)               # (S, D)
    h_n = align_neighbors(slot_nodes, slot_edges, p, cfg.leaky_slope)        # (S, N, D)
    slots = nn.concat([nn.reshape(h_i, (S, 1, cfg.hidden)), h_n], axis=1)    # self slot first
    mask = np.concatenate([np.ones((S, 1), dtype=bool), np.asarray(slot_mask, dtype=bool)], axis=1)
    alpha = normalize_scores(attention_scores(h_i, slots, p, cfg.leaky_slope), mask)
    h_g = aggregate(slots, alpha, p, cfg.elu_alpha)
    return (h_g, alpha) if return_alpha else h_g


def pad_slots(feats: list[SubgraphFeatures], max_neighbors: int | None):
    """Stack interval features into padded arrays. With a cap, the most recent
    slots are kept (slots are in time order)."""
    cv, ce = len(NODE_FEATURES), len(EDGE_FEATURES)
    counts = [len(f.slot_nodes) if max_neighbors is None else min(len(f.slot_nodes), max_neighbors) for f in feats]
    N = max([1] + counts) if max_neighbors is None else max_neighbors
    S = len(feats)
    center = np.zeros((S, cv))
    nodes = np.zeros((S, N, cv))
    edges = np.zeros((S, N, ce))
    mask = np.zeros((S, N), dtype=bool)
    for i, (f, c) in enumerate(zip(feats, counts)):
        center[i] = f.center
        if c:
            nodes[i, :c] = f.slot_nodes[-c:]
            edges[i, :c] = f.slot_edges[-c:]
            mask[i, :c] = True
    return center, nodes, edges, mask


def encode_sequence(seq: SubgraphSequence | list, p: ParamSet, cfg: FeatureConfig) -> Tensor:
    """(m, D) interval embeddings; empty intervals map to zero rows."""
    feats = sequence_features(seq) if isinstance(seq, SubgraphSequence) else seq
    m = len(feats)
    idx = [i for i, f in enumerate(feats) if f is not None]
    if not idx:
        return nn.Tensor(np.zeros((m, cfg.hidden)))
    center, nodes, edges, mask = pad_slots([feats[i] for i in idx], cfg.max_neighbors)
    h = encode_subgraphs(center, nodes, edges, mask, p, cfg)
    return nn.scatter_rows(h, idx, m)
