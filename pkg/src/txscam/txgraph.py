"""Temporal multi-directed transaction graph, record parsing and degree statistics."""
from __future__ import annotations

import csv
import enum
import io
import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, TextIO

import numpy as np

_ADDR_RE = re.compile(r"^0x[0-9a-fA-F]{40}$")


class UnreadableInput(Exception):
    pass


class MalformedRecord(ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class UnknownNode(KeyError):
    pass


class NoEdges(ValueError):
    pass


def canonical_address(raw: str) -> str:
    """Validate an address and return its lowercase ``0x``-prefixed form."""
    if not isinstance(raw, str):
        raise ValueError(f"address must be a string, got {type(raw).__name__}")
    s = raw.strip()
    if s[:2] in ("0X",):
        s = "0x" + s[2:]
    if not _ADDR_RE.match(s):
        raise ValueError(f"invalid address {raw!r}")
    return s.lower()


class Label(enum.Enum):
    NORMAL = "normal"
    PHISHING = "phishing"
    WEB3SCAM = "web3scam"
    UNLABELED = "unlabeled"

    @classmethod
    def parse(cls, raw: str) -> "Label":
        key = raw.strip().lower().replace("_", "").replace("-", "").replace(" ", "")
        for lab in cls:
            if lab.value == key:
                return lab
        raise ValueError(f"unknown label class {raw!r}")

    @property
    def is_malicious(self) -> bool:
        return self in (Label.PHISHING, Label.WEB3SCAM)


@dataclass(frozen=True)
class Transaction:
    hash: str
    sender: str
    receiver: str
    value: int
    timestamp: int
    block: int

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("value must be non-negative")
        if self.timestamp <= 0:
            raise ValueError("timestamp must be positive")
        if self.block < 0:
            raise ValueError("block must be non-negative")

    def as_record(self) -> dict:
        return {
            "hash": self.hash,
            "from": self.sender,
            "to": self.receiver,
            "value": self.value,
            "timestamp": self.timestamp,
            "block": self.block,
        }


TX_FIELDS = ("hash", "from", "to", "value", "timestamp", "block")


def _parse_int(raw, name: str) -> int:
    if isinstance(raw, bool):
        raise ValueError(f"{name} must be an integer")
    if isinstance(raw, int):
        return raw
    if isinstance(raw, str) and raw.strip().lstrip("+").isdigit():
        return int(raw.strip())
    raise ValueError(f"{name} must be a decimal integer, got {raw!r}")


def _record_to_tx(rec: Mapping) -> Transaction:
    missing = [k for k in TX_FIELDS if k not in rec or rec[k] is None]
    if missing:
        raise ValueError(f"missing fields {missing}")
    return Transaction(
        hash=str(rec["hash"]).strip(),
        sender=canonical_address(rec["from"]),
        receiver=canonical_address(rec["to"]),
        value=_parse_int(rec["value"], "value"),
        timestamp=_parse_int(rec["timestamp"], "timestamp"),
        block=_parse_int(rec["block"], "block"),
    )


@dataclass
class ParseResult:
    transactions: list[Transaction]
    skipped: int = 0
    errors: list[MalformedRecord] = field(default_factory=list)


def parse_transactions(stream: TextIO | str, fmt: str = "csv", strict: bool = False) -> ParseResult:
    """Parse a CSV (header required) or JSONL transaction dump.

    In lenient mode malformed records are skipped and collected in
    ``errors``; in strict mode the first one raises :class:`MalformedRecord`.
    Line numbers are 1-based and count the CSV header.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    try:
        text = stream.read()
    except (OSError, UnicodeDecodeError) as exc:
        raise UnreadableInput(str(exc)) from exc
    result = ParseResult([])

    def bad(line: int, reason: str):
        err = MalformedRecord(line, reason)
        if strict:
            raise err
        result.errors.append(err)
        result.skipped += 1

    lines = text.splitlines()
    if fmt == "csv":
        if not any(ln.strip() for ln in lines):
            return result
        reader = csv.reader(lines)
        header = None
        for lineno, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if header is None:
                header = [c.strip().lower() for c in row]
                if set(TX_FIELDS) - set(header):
                    raise UnreadableInput(f"CSV header must contain {','.join(TX_FIELDS)}; got {row}")
                continue
            if len(row) != len(header):
                bad(lineno, f"expected {len(header)} columns, got {len(row)}")
                continue
            try:
                result.transactions.append(_record_to_tx(dict(zip(header, row))))
            except ValueError as exc:
                bad(lineno, str(exc))
    elif fmt == "jsonl":
        for lineno, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict):
                    raise ValueError("record is not a JSON object")
                result.transactions.append(_record_to_tx(rec))
            except ValueError as exc:
                bad(lineno, str(exc))
    else:
        raise ValueError(f"unsupported format {fmt!r}")
    return result


def write_transactions_csv(txs: Iterable[Transaction], stream: TextIO) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(TX_FIELDS)
    for tx in txs:
        w.writerow([tx.hash, tx.sender, tx.receiver, tx.value, tx.timestamp, tx.block])


def write_transactions_jsonl(txs: Iterable[Transaction], stream: TextIO) -> None:
    for tx in txs:
        stream.write(json.dumps(tx.as_record()) + "\n")


def parse_labels(stream: TextIO | str) -> dict[str, Label]:
    """Read an ``address,class`` CSV. A header row is optional."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    labels: dict[str, Label] = {}
    for lineno, row in enumerate(csv.reader(stream), start=1):
        if not row or not row[0].strip():
            continue
        if lineno == 1 and row[0].strip().lower() == "address":
            continue
        if len(row) != 2:
            raise MalformedRecord(lineno, "labels rows must be address,class")
        try:
            labels[canonical_address(row[0])] = Label.parse(row[1])
        except ValueError as exc:
            raise MalformedRecord(lineno, str(exc)) from exc
    return labels


def write_labels(labels: Mapping[str, Label], stream: TextIO) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["address", "class"])
    for addr in sorted(labels):
        w.writerow([addr, labels[addr].value])


class TemporalMultiDiGraph:
    """Immutable multigraph of accounts and timestamped transfers.

    Edges are stored column-wise in numpy arrays; ``edges[i]`` is the i-th
    transaction after a canonical sort, so two graphs built from permutations
    of the same records are identical. Per-node adjacency holds edge indices
    ordered by timestamp.
    """

    def __init__(self, txs: Iterable[Transaction], labels: Mapping[str, Label] | None = None):
        ordered = sorted(txs, key=lambda t: (t.timestamp, t.block, t.hash, t.sender, t.receiver, t.value))
        self._edges: tuple[Transaction, ...] = tuple(ordered)
        nodes = set()
        for tx in ordered:
            nodes.add(tx.sender)
            nodes.add(tx.receiver)
        self._node_list = sorted(nodes)
        self._node_id = {a: i for i, a in enumerate(self._node_list)}

        n_e = len(ordered)
        self.src = np.fromiter((self._node_id[t.sender] for t in ordered), dtype=np.int64, count=n_e)
        self.dst = np.fromiter((self._node_id[t.receiver] for t in ordered), dtype=np.int64, count=n_e)
        self.ts = np.fromiter((t.timestamp for t in ordered), dtype=np.int64, count=n_e)
        # float copy of wei amounts; exact integers stay on the Transaction objects
        self.value_wei = np.array([float(t.value) for t in ordered], dtype=np.float64)

        # edges are already time-sorted, so a stable argsort by node keeps time order
        n_v = len(self._node_list)
        out_order = np.argsort(self.src, kind="stable")
        in_order = np.argsort(self.dst, kind="stable")
        out_ptr = np.zeros(n_v + 1, dtype=np.int64)
        in_ptr = np.zeros(n_v + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.src, minlength=n_v), out=out_ptr[1:])
        np.cumsum(np.bincount(self.dst, minlength=n_v), out=in_ptr[1:])
        self._out_idx, self._out_ptr = out_order, out_ptr
        self._in_idx, self._in_ptr = in_order, in_ptr

        # merged incidence lists (both directions); self-loops appear twice
        inc_edges = np.concatenate([self._out_idx, self._in_idx])
        inc_node = np.concatenate([self.src[self._out_idx], self.dst[self._in_idx]])
        order = np.lexsort((inc_edges, self.ts[inc_edges], inc_node))
        self._inc_idx = inc_edges[order]
        inc_ptr = np.zeros(n_v + 1, dtype=np.int64)
        np.cumsum(np.bincount(inc_node, minlength=n_v), out=inc_ptr[1:])
        self._inc_ptr = inc_ptr

        lab = dict(labels or {})
        self._labels = {a: lab.get(a, Label.UNLABELED) for a in self._node_list}
        # labeled accounts with no transactions are still remembered as seeds
        self._extra_labels = {a: l for a, l in lab.items() if a not in self._node_id}
        for arr in (self.src, self.dst, self.ts, self.value_wei, self._out_idx, self._in_idx,
                    self._out_ptr, self._in_ptr, self._inc_idx, self._inc_ptr):
            arr.flags.writeable = False

    # basic accessors
    @property
    def nodes(self) -> list[str]:
        return list(self._node_list)

    @property
    def edges(self) -> tuple[Transaction, ...]:
        return self._edges

    def __len__(self):
        return len(self._node_list)

    def __contains__(self, addr: str) -> bool:
        return addr in self._node_id

    @property
    def num_edges(self) -> int:
        return len(self._edges)

    def node_id(self, addr: str) -> int:
        try:
            return self._node_id[addr]
        except KeyError:
            raise UnknownNode(addr) from None

    def address(self, idx: int) -> str:
        return self._node_list[idx]

    def label(self, addr: str) -> Label:
        if addr in self._labels:
            return self._labels[addr]
        return self._extra_labels.get(addr, Label.UNLABELED)

    @property
    def labels(self) -> dict[str, Label]:
        out = {a: l for a, l in self._labels.items() if l is not Label.UNLABELED}
        out.update(self._extra_labels)
        return out

    def out_edges(self, addr: str) -> np.ndarray:
        i = self.node_id(addr)
        return self._out_idx[self._out_ptr[i]:self._out_ptr[i + 1]]

    def in_edges(self, addr: str) -> np.ndarray:
        i = self.node_id(addr)
        return self._in_idx[self._in_ptr[i]:self._in_ptr[i + 1]]

    def incident_edges(self, addr: str) -> np.ndarray:
        """Edge indices touching ``addr`` in either direction, ascending by time."""
        i = self.node_id(addr)
        return self._inc_idx[self._inc_ptr[i]:self._inc_ptr[i + 1]]

    def opposite(self, edge: int, node_idx: int) -> int:
        s, d = int(self.src[edge]), int(self.dst[edge])
        return d if s == node_idx else s

    def in_degree(self, addr: str) -> int:
        i = self.node_id(addr)
        return int(self._in_ptr[i + 1] - self._in_ptr[i])

    def out_degree(self, addr: str) -> int:
        i = self.node_id(addr)
        return int(self._out_ptr[i + 1] - self._out_ptr[i])

    def subgraph_edges(self, edge_idx: Iterable[int]) -> list[Transaction]:
        return [self._edges[i] for i in edge_idx]


def build_graph(txs: Iterable[Transaction], labels: Mapping[str, Label] | None = None) -> TemporalMultiDiGraph:
    return TemporalMultiDiGraph(txs, labels)


def neighbors_in_window(g: TemporalMultiDiGraph, v: str, t_start: int, t_end: float) -> list[tuple[int, str]]:
    """Incident edges of ``v`` with ``t_start <= timestamp < t_end``, oldest first."""
    if t_start > t_end:
        raise ValueError("t_start must not exceed t_end")
    idx = window_edge_indices(g, v, t_start, t_end)
    vi = g.node_id(v)
    return [(int(e), g.address(g.opposite(int(e), vi))) for e in idx]


def window_edge_indices(g: TemporalMultiDiGraph, v: str, t_start: int, t_end: float) -> np.ndarray:
    inc = g.incident_edges(v)
    ts = g.ts[inc]
    lo = np.searchsorted(ts, t_start, side="left")
    hi = len(ts) if math.isinf(t_end) else np.searchsorted(ts, t_end, side="left")
    return inc[lo:hi]


def min_timestamp(g: TemporalMultiDiGraph, v: str) -> int:
    inc = g.incident_edges(v)
    if len(inc) == 0:
        raise NoEdges(v)
    return int(g.ts[inc[0]])


@dataclass
class DegreeStats:
    in_degree: dict[str, int]
    out_degree: dict[str, int]
    in_histogram: dict[int, int]
    out_histogram: dict[int, int]
    node_count: int
    edge_count: int
    source_count: int
    sd_degree: float

    def to_json(self) -> dict:
        return {
            "node_count": self.node_count,
            "edge_count": self.edge_count,
            "source_count": self.source_count,
            "sd_degree": self.sd_degree,
            "in_histogram": {str(k): v for k, v in sorted(self.in_histogram.items())},
            "out_histogram": {str(k): v for k, v in sorted(self.out_histogram.items())},
        }


def degree_stats(g: TemporalMultiDiGraph) -> DegreeStats:
    """Per-node degree counts, degree-frequency histograms and the SD of total degree.

    ``sd_degree`` is the population standard deviation of in+out degree;
    ``source_count`` is the number of labeled seed accounts.
    """
    n = len(g)
    ind = np.bincount(g.dst, minlength=n) if n else np.zeros(0, dtype=np.int64)
    outd = np.bincount(g.src, minlength=n) if n else np.zeros(0, dtype=np.int64)
    total = ind + outd
    sd = float(np.sqrt(np.mean((total - total.mean()) ** 2))) if n else 0.0
    return DegreeStats(
        in_degree={a: int(ind[i]) for i, a in enumerate(g.nodes)},
        out_degree={a: int(outd[i]) for i, a in enumerate(g.nodes)},
        in_histogram=dict(Counter(int(x) for x in ind)),
        out_histogram=dict(Counter(int(x) for x in outd)),
        node_count=n,
        edge_count=g.num_edges,
        source_count=len(g.labels),
        sd_degree=sd,
    )
