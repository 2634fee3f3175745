"""Transposed self-attention sequence classifier over interval embeddings.

In the default (transposed) layout the (intervals x channels) matrix is
transposed so that every embedding channel becomes one token: the channel's
full interval series, zero-padded to ``max_len``, is embedded to ``d``
dimensions, tokens attend to each other, and after the feed-forward block a
second linear map brings each token back onto the interval axis. The
conventional layout (``ablate="transpose"``) treats each interval's embedding
row as a token and attends across intervals under the padding (and optional
causal) mask. Both end in a same-padded 1-D convolution over intervals,
masked max- and mean-pooling and a two-logit projection.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import nn
from .encoder import FeatureConfig, SubgraphFeatures, encode_subgraphs, init_encoder_params, pad_slots
from .evaluate import confusion, metrics
from .nn import ParamSet, Tensor
from .strwalk import make_rng


class SingleClassDataset(ValueError):
    pass


class ConflictingFlags(ValueError):
    pass


@dataclass(frozen=True)
class SeqModelConfig:
    hidden: int = 16
    layers: int = 1
    heads: int = 2
    max_len: int = 157
    conv_channels: int = 8
    kernel_size: int = 3
    weight_decay: float = 5e-4
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    causal: bool = False
    ablate: str | None = None  # None, "graph" or "transpose"

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ValueError("hidden must be divisible by heads")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if self.layers != 1:
            raise ValueError("only a single encoder layer is supported")
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd")
        if self.ablate not in (None, "graph", "transpose"):
            raise ConflictingFlags(f"unknown ablation {self.ablate!r}")

    @property
    def transposed(self) -> bool:
        return self.ablate != "transpose"

    @property
    def graph_encoder(self) -> bool:
        return self.ablate != "graph"

    @classmethod
    def from_flags(cls, disable_graph_encoder: bool = False, disable_transposed: bool = False, **kw):
        if disable_graph_encoder and disable_transposed:
            raise ConflictingFlags("only one ablation at a time")
        ablate = "graph" if disable_graph_encoder else "transpose" if disable_transposed else None
        return cls(ablate=ablate, **kw)

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class Mask:
    valid: np.ndarray          # (B, L) bool
    causal: bool = False

    def scores_mask(self) -> np.ndarray:
        """(B, 1, L, L)-broadcastable mask over (query, key) pairs."""
        m = self.valid[:, None, None, :]
        if self.causal:
            L = self.valid.shape[1]
            m = m & np.tril(np.ones((L, L), dtype=bool))[None, None]
        return m


def transpose_embed(phi: np.ndarray, max_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Φ (m, D) -> X (D, max_len) with a validity mask over positions.

    Sequences longer than ``max_len`` keep their most recent intervals.
    """
    phi = np.asarray(phi, dtype=np.float64)
    m = phi.shape[0]
    if m < 1:
        raise ValueError("need at least one interval")
    kept = phi[-max_len:]
    x = np.zeros((phi.shape[1], max_len))
    x[:, :len(kept)] = kept.T
    valid = np.zeros(max_len, dtype=bool)
    valid[:len(kept)] = True
    return x, valid


def apply_mask(scores: np.ndarray, mask: np.ndarray | None, causal: bool = False) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    full = np.ones(scores.shape, dtype=bool) if mask is None else np.broadcast_to(np.asarray(mask, dtype=bool), scores.shape)
    if causal:
        L = scores.shape[-1]
        full = full & np.tril(np.ones((scores.shape[-2], L), dtype=bool))
    return nn.masked_fill(scores, full)


def init_seq_params(cfg: SeqModelConfig, channels: int, rng: np.random.Generator) -> ParamSet:
    d = cfg.hidden
    ps = ParamSet()
    M = cfg.max_len
    if cfg.transposed:
        ps.add("embed_w", nn.xavier_uniform(rng, (M, d)))
        ps.add("embed_b", np.zeros(d), weight=False)
        ps.add("unembed_w", nn.xavier_uniform(rng, (d, M)))
        ps.add("unembed_b", np.zeros(M), weight=False)
        head_in = channels
    else:
        if channels != d:
            ps.add("in_proj", nn.xavier_uniform(rng, (channels, d)))
        head_in = d
    for name in ("q_w", "k_w", "v_w", "ff_w1", "ff_w2"):
        ps.add(name, nn.xavier_uniform(rng, (d, d)))
    ps.add("ff_b1", np.zeros(d), weight=False)
    ps.add("ff_b2", np.zeros(d), weight=False)
    K = cfg.kernel_size
    ps.add("conv_w", nn.xavier_uniform(rng, (K, head_in, cfg.conv_channels), fan_in=K * head_in,
                                       fan_out=cfg.conv_channels))
    ps.add("conv_b", np.zeros(cfg.conv_channels), weight=False)
    ps.add("proj_w", nn.xavier_uniform(rng, (2 * cfg.conv_channels, 2)))
    ps.add("proj_b", np.zeros(2), weight=False)
    return ps


def attention(x, p: ParamSet, mask: np.ndarray | None, heads: int = 1, return_weights: bool = False):
    """Multi-head scaled dot-product self-attention over the second-to-last axis.

    x: (..., L, d). ``mask`` broadcasts against (..., heads, L, L) and marks
    keys that may be attended. Scores are scaled by the per-head width.
    """
    x = nn.as_tensor(x)
    *lead, L, d = x.shape
    if d % heads or p["q_w"].shape[0] != d:
        raise nn.ShapeMismatch(f"attention input {x.shape} with {heads} heads")
    dh = d // heads
    q, k, v = x @ p["q_w"], x @ p["k_w"], x @ p["v_w"]
    split = lambda t: nn.swapaxes(nn.reshape(t, tuple(lead) + (L, heads, dh)), -3, -2)  # noqa: E731
    q, k, v = split(q), split(k), split(v)
    scores = nn.mul(q @ k.T, 1.0 / math.sqrt(dh))
    w = nn.softmax(scores, mask=mask, axis=-1)
    h = nn.reshape(nn.swapaxes(w @ v, -3, -2), tuple(lead) + (L, d))
    return (h, w) if return_weights else h


def feed_forward(h_s, p: ParamSet) -> Tensor:
    h_s = nn.as_tensor(h_s)
    if h_s.shape[-1] != p["ff_w1"].shape[0]:
        raise nn.ShapeMismatch(f"feed-forward input {h_s.shape}")
    return nn.sigmoid(h_s @ p["ff_w1"] + p["ff_b1"]) @ p["ff_w2"] + p["ff_b2"]


def encoder_layer(x, p: ParamSet, mask: np.ndarray | None, heads: int):
    """Attention and feed-forward, each wrapped in a residual connection."""
    x = nn.as_tensor(x)
    a, w = attention(x, p, mask, heads, return_weights=True)
    h_s = x + a
    return h_s + feed_forward(h_s, p), w


def classify(h, valid: np.ndarray, p: ParamSet, slope: float = 0.01) -> Tensor:
    """Conv over intervals, masked max- and mean-pool, linear projection to 2 logits.

    h: (B, L, C). Padded positions are zeroed before the convolution so that
    they read exactly like the convolution's own zero padding.
    """
    h = nn.as_tensor(h)
    if h.data.ndim != 3 or h.shape[-1] != p["conv_w"].shape[1]:
        raise nn.ShapeMismatch(f"classifier input {h.shape} vs conv {p['conv_w'].shape}")
    valid = np.asarray(valid, dtype=bool)
    h = nn.mul(h, valid[:, :, None].astype(np.float64))
    c = nn.leaky_relu(nn.conv1d(h, p["conv_w"], p["conv_b"]), slope)
    vm = valid[:, :, None]
    pooled = nn.concat([nn.masked_max(c, vm, axis=1), nn.masked_mean(c, vm, axis=1)], axis=-1)
    return pooled @ p["proj_w"] + p["proj_b"]


def weight_penalty(groups) -> Tensor:
    total = Tensor(0.0)
    for ps in groups:
        for w in ps.weights():
            total = total + nn.square_sum(w)
    return total


def loss(logits, labels, groups, lam: float) -> Tensor:
    """Cross-entropy plus ``lam`` times the squared norm of all weight matrices."""
    ce = nn.cross_entropy(logits, labels)
    if lam == 0:
        return ce
    return ce + nn.mul(weight_penalty(groups), lam)


def seq_forward(phi, valid: np.ndarray, p: ParamSet, cfg: SeqModelConfig, return_weights: bool = False):
    """Logits for a batch of interval-embedding sequences ``phi`` (B, L, C)."""
    phi = nn.as_tensor(phi)
    B, L, C = phi.shape
    d = cfg.hidden
    m = Mask(valid, cfg.causal)
    if cfg.transposed:
        M = cfg.max_len
        if L > M:
            raise nn.ShapeMismatch(f"sequence length {L} exceeds max_len {M}")
        x = nn.swapaxes(phi, 1, 2)                                          # (B, C, L)
        if L < M:
            x = nn.concat([x, np.zeros((B, C, M - L))], axis=-1)           # (B, C, M)
        tok = x @ p["embed_w"] + p["embed_b"]                               # (B, C, d)
        tok, w = encoder_layer(tok, p, None, cfg.heads)                     # channels attend to channels
        h = x + (tok @ p["unembed_w"] + p["unembed_b"])                     # (B, C, M)
        h = nn.swapaxes(h, 1, 2)                                            # (B, M, C)
        valid = np.concatenate([valid, np.zeros((B, M - L), dtype=bool)], axis=1)
    else:
        tok = phi @ p["in_proj"] if "in_proj" in p.names() else phi
        h, w = encoder_layer(tok, p, m.scores_mask(), cfg.heads)            # (B, L, d)
    logits = classify(h, valid, p)
    return (logits, w) if return_weights else logits


# -- batching -----------------------------------------------------------------

@dataclass
class Example:
    """One account: raw per-interval features (``None`` = empty interval)."""
    address: str
    intervals: list[SubgraphFeatures | None]
    label: int = 0


@dataclass
class Batch:
    center: np.ndarray
    slot_nodes: np.ndarray
    slot_edges: np.ndarray
    slot_mask: np.ndarray
    positions: np.ndarray      # flat (b * L + t) index of every non-empty interval
    mean_nodes: np.ndarray     # (B, L, C_v)
    valid: np.ndarray          # (B, L)
    labels: np.ndarray


def collate(examples: list[Example], max_len: int, feat_cfg: FeatureConfig) -> Batch:
    trimmed = [ex.intervals[-max_len:] for ex in examples]
    L = max(len(t) for t in trimmed)
    B = len(examples)
    valid = np.zeros((B, L), dtype=bool)
    mean_nodes = np.zeros((B, L, feat_cfg.node_dim))
    feats, pos = [], []
    for b, ivs in enumerate(trimmed):
        valid[b, :len(ivs)] = True
        for t, f in enumerate(ivs):
            if f is not None:
                feats.append(f)
                pos.append(b * L + t)
                mean_nodes[b, t] = f.mean_nodes
    if feats:
        center, nodes, edges, mask = pad_slots(feats, feat_cfg.max_neighbors)
    else:
        cv, ce = feat_cfg.node_dim, feat_cfg.edge_dim
        center, nodes, edges, mask = np.zeros((0, cv)), np.zeros((0, 1, cv)), np.zeros((0, 1, ce)), np.zeros((0, 1), bool)
    return Batch(center, nodes, edges, mask, np.asarray(pos, dtype=np.int64), mean_nodes, valid,
                 np.array([ex.label for ex in examples], dtype=np.int64))


class Model:
    """Graph encoder + sequence classifier with their parameter sets."""

    def __init__(self, feat_cfg: FeatureConfig, cfg: SeqModelConfig, encoder_params: ParamSet | None = None,
                 seq_params: ParamSet | None = None):
        self.feat_cfg = feat_cfg
        self.cfg = cfg
        rng = make_rng(cfg.seed, "init")
        self.encoder_params = encoder_params if encoder_params is not None else init_encoder_params(feat_cfg, rng)
        channels = feat_cfg.hidden if cfg.graph_encoder else feat_cfg.node_dim
        self.seq_params = seq_params if seq_params is not None else init_seq_params(cfg, channels, rng)

    @property
    def groups(self) -> list[ParamSet]:
        return [self.encoder_params, self.seq_params] if self.cfg.graph_encoder else [self.seq_params]

    def phi(self, batch: Batch) -> Tensor:
        B, L = batch.valid.shape
        if not self.cfg.graph_encoder:
            return Tensor(batch.mean_nodes)
        if len(batch.positions) == 0:
            return Tensor(np.zeros((B, L, self.feat_cfg.hidden)))
        h = encode_subgraphs(batch.center, batch.slot_nodes, batch.slot_edges, batch.slot_mask,
                             self.encoder_params, self.feat_cfg)
        return nn.reshape(nn.scatter_rows(h, batch.positions, B * L), (B, L, self.feat_cfg.hidden))

    def logits(self, batch: Batch) -> Tensor:
        return seq_forward(self.phi(batch), batch.valid, self.seq_params, self.cfg)

    def loss(self, batch: Batch, lam: float | None = None) -> Tensor:
        lam = self.cfg.weight_decay if lam is None else lam
        return loss(self.logits(batch), batch.labels, self.groups, lam)

    def state(self) -> dict:
        return {"encoder": self.encoder_params.state(), "seq": self.seq_params.state()}

    def load_state(self, state: dict) -> None:
        self.encoder_params.load_state(state["encoder"])
        self.seq_params.load_state(state["seq"])

    def save(self, path, meta: dict | None = None) -> None:
        meta = dict(meta or {})
        meta["seq_config"] = asdict(self.cfg)
        meta["feature_config"] = asdict(self.feat_cfg)
        nn.save_checkpoint(path, {"encoder": self.encoder_params, "seq": self.seq_params}, meta)

    @classmethod
    def load(cls, path) -> "Model":
        groups, meta = nn.load_checkpoint(path)
        try:
            cfg = SeqModelConfig(**meta["seq_config"])
            feat_cfg = FeatureConfig(**meta["feature_config"])
        except (KeyError, TypeError) as exc:
            raise nn.ShapeMismatch(f"checkpoint config unreadable: {exc}") from exc
        model = cls(feat_cfg, cfg)
        model.load_state(groups)
        return model


# -- training and inference ----------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_weighted_f1: float


@dataclass
class TrainResult:
    model: Model
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0


def _batches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, size):
        yield order[i:i + size]


def predict_scores(model: Model, examples: list[Example], batch_size: int = 64) -> np.ndarray:
    """Softmax probability of the malicious class per example."""
    out = []
    for i in range(0, len(examples), batch_size):
        batch = collate(examples[i:i + batch_size], model.cfg.max_len, model.feat_cfg)
        logits = model.logits(batch).data
        z = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        out.append(p[:, 1])
    return np.concatenate(out) if out else np.zeros(0)


def label_from_scores(scores: np.ndarray) -> np.ndarray:
    # ties (0.5) go to the normal class
    return (np.asarray(scores) > 0.5).astype(np.int64)


def predict(model: Model, example: Example) -> tuple[int, float]:
    score = float(predict_scores(model, [example])[0])
    return int(label_from_scores(np.array([score]))[0]), score


def evaluate_loss(model: Model, examples: list[Example], batch_size: int = 64) -> float:
    total = 0.0
    for i in range(0, len(examples), batch_size):
        chunk = examples[i:i + batch_size]
        batch = collate(chunk, model.cfg.max_len, model.feat_cfg)
        total += float(model.loss(batch).data) * len(chunk)
    return total / max(1, len(examples))


def train(train_set: list[Example], cfg: SeqModelConfig, feat_cfg: FeatureConfig | None = None,
          val_set: list[Example] | None = None, encoder_params: ParamSet | None = None,
          seq_params: ParamSet | None = None, log=None) -> TrainResult:
    """Mini-batch Adam with decoupled weight decay; keeps the best-validation state.

    Without a validation set the final epoch's parameters are kept.
    """
    if not train_set:
        raise SingleClassDataset("empty training set")
    if len({ex.label for ex in train_set}) < 2:
        raise SingleClassDataset("training data must contain both classes")
    feat_cfg = feat_cfg or FeatureConfig(hidden=cfg.hidden)
    model = Model(feat_cfg, cfg, encoder_params, seq_params)
    params = [p for ps in model.groups for p in ps]
    decay = {p.name for ps in model.groups for p in ps.weights()}
    opt = nn.Adam(params, lr=cfg.learning_rate, weight_decay=cfg.weight_decay, decay_names=decay)
    rng = make_rng(cfg.seed, "shuffle")
    result = TrainResult(model)
    best, best_state = -math.inf, None
    for epoch in range(1, cfg.epochs + 1):
        total = 0.0
        for idx in _batches(len(train_set), cfg.batch_size, rng):
            batch = collate([train_set[i] for i in idx], cfg.max_len, feat_cfg)
            with nn.Tape() as tape:
                value = model.loss(batch)
            tape.backward(value)
            opt.step()
            total += float(value.data) * len(idx)
        train_loss = total / len(train_set)
        if val_set:
            val_loss = evaluate_loss(model, val_set)
            preds = label_from_scores(predict_scores(model, val_set))
            truth = np.array([ex.label for ex in val_set])
            wf1 = metrics(confusion(preds, truth)).weighted_f1
            # ties prefer the later epoch via >=: lower loss usually follows
            key = (wf1, -val_loss)
            if best_state is None or key >= best:
                best, best_state, result.best_epoch = key, model.state(), epoch
        else:
            val_loss, wf1 = float("nan"), float("nan")
            best_state, result.best_epoch = model.state(), epoch
        result.history.append(EpochRecord(epoch, train_loss, val_loss, wf1))
        if log:
            log(f"epoch {epoch}: train_loss={train_loss:.6f} val_loss={val_loss:.6f} val_wf1={wf1:.4f}")
    model.load_state(best_state)
    return result


def with_overrides(cfg: SeqModelConfig, **kw) -> SeqModelConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
