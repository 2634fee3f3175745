"""Client for Etherscan-compatible ``account/txlist`` endpoints and a BFS crawler."""
from __future__ import annotations

import logging
import math
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import requests

from .txgraph import Transaction, canonical_address

log = logging.getLogger(__name__)

API_KEY_ENV = "TXSCAM_API_KEY"


class FetchError(Exception):
    pass


class Timeout(FetchError):
    pass


class RateLimited(FetchError):
    pass


class HttpError(FetchError):
    def __init__(self, status: int, msg: str = ""):
        super().__init__(f"HTTP {status} {msg}".strip())
        self.status = status


class DecodeError(FetchError):
    pass


@dataclass
class FetchConfig:
    base_url: str
    api_key: str = ""
    requests_per_second: float = 5.0
    query_timeout: float = 180.0
    max_retries: int = 3
    page_size: int = 1000
    backoff: float = 0.5
    workers: int = 1

    def __post_init__(self):
        if self.requests_per_second <= 0:
            raise ValueError("requests_per_second must be positive")
        if self.query_timeout <= 0:
            raise ValueError("query_timeout must be positive")
        if self.max_retries < 0 or self.page_size < 1 or self.workers < 1:
            raise ValueError("max_retries >= 0, page_size >= 1 and workers >= 1 required")

    @classmethod
    def from_env(cls, base_url: str, **kw) -> "FetchConfig":
        return cls(base_url=base_url, api_key=os.environ.get(API_KEY_ENV, ""), **kw)


class RateLimiter:
    """Token bucket with capacity one: at most ``rate`` acquisitions per second."""

    def __init__(self, rate: float, clock=time.monotonic, sleep=time.sleep):
        self.interval = 1.0 / rate
        self.clock = clock
        self.sleep = sleep
        self._next = None
        self._lock = threading.Lock()

    def acquire(self) -> None:
        with self._lock:
            now = self.clock()
            if self._next is None or now >= self._next:
                self._next = now + self.interval
                return
            wait = self._next - now
            self._next += self.interval
        self.sleep(wait)


class EtherscanClient:
    def __init__(self, cfg: FetchConfig, session: requests.Session | None = None,
                 limiter: RateLimiter | None = None, sleep=time.sleep):
        self.cfg = cfg
        self.session = session or requests.Session()
        self.limiter = limiter or RateLimiter(cfg.requests_per_second)
        self.sleep = sleep
        self.requests_made = 0

    def _get(self, params: dict) -> dict:
        last_status = None
        for attempt in range(self.cfg.max_retries + 1):
            self.limiter.acquire()
            self.requests_made += 1
            try:
                resp = self.session.get(self.cfg.base_url, params=params, timeout=self.cfg.query_timeout)
            except requests.Timeout as exc:
                raise Timeout(f"no response within {self.cfg.query_timeout}s") from exc
            except requests.RequestException as exc:
                raise FetchError(str(exc)) from exc
            if resp.status_code == 429:
                last_status = 429
                self.sleep(self.cfg.backoff * 2**attempt)
                continue
            if resp.status_code >= 500:
                last_status = resp.status_code
                self.sleep(self.cfg.backoff * 2**attempt)
                continue
            if resp.status_code != 200:
                raise HttpError(resp.status_code, resp.reason or "")
            try:
                body = resp.json()
            except ValueError as exc:
                raise DecodeError("response is not JSON") from exc
            if not isinstance(body, dict) or "result" not in body:
                raise DecodeError("response lacks a result field")
            # Etherscan signals throttling in-band with status 0
            if str(body.get("status")) == "0" and isinstance(body["result"], str) and "rate limit" in body["result"].lower():
                last_status = 429
                self.sleep(self.cfg.backoff * 2**attempt)
                continue
            return body
        if last_status == 429:
            raise RateLimited(f"still throttled after {self.cfg.max_retries} retries")
        raise HttpError(last_status or 0, "retries exhausted")

    def account_transactions(self, addr: str, start_block: int = 0, end_block: int = 99_999_999,
                             limit: int | None = None) -> list[Transaction]:
        """All external transactions of ``addr`` in the block range, ordered by (block, hash)."""
        addr = canonical_address(addr)
        out: list[Transaction] = []
        page = 1
        while True:
            params = {
                "module": "account", "action": "txlist", "address": addr,
                "startblock": start_block, "endblock": end_block,
                "page": page, "offset": self.cfg.page_size, "sort": "asc",
            }
            if self.cfg.api_key:
                params["apikey"] = self.cfg.api_key
            body = self._get(params)
            result = body["result"]
            if str(body.get("status")) == "0" and not isinstance(result, list):
                # "No transactions found" and friends
                break
            if not isinstance(result, list):
                raise DecodeError("result is not a list")
            for rec in result:
                try:
                    tx = Transaction(
                        hash=str(rec["hash"]),
                        sender=canonical_address(rec["from"]),
                        receiver=canonical_address(rec["to"]),
                        value=int(rec["value"]),
                        timestamp=int(rec["timeStamp"]),
                        block=int(rec["blockNumber"]),
                    )
                except (KeyError, ValueError, TypeError) as exc:
                    # contract creations carry an empty "to"; skip them
                    if isinstance(rec, dict) and rec.get("to") in ("", None):
                        continue
                    raise DecodeError(f"bad transaction record: {exc}") from exc
                out.append(tx)
            if len(result) < self.cfg.page_size or (limit is not None and len(out) >= limit):
                break
            page += 1
        out.sort(key=lambda t: (t.block, t.hash))
        return out[:limit] if limit is not None else out


def fetch_account_transactions(cfg: FetchConfig, addr: str, block_range=(0, 99_999_999),
                               client: EtherscanClient | None = None) -> list[Transaction]:
    client = client or EtherscanClient(cfg)
    return client.account_transactions(addr, block_range[0], block_range[1])


@dataclass
class CrawlSpec:
    seeds: set[str]
    depth: int = 2
    block_range: tuple[int, int] = (0, 99_999_999)
    per_node_tx_cap: int = 10_000

    def __post_init__(self):
        self.seeds = {canonical_address(s) for s in self.seeds}
        if self.depth < 0:
            raise ValueError("depth must be non-negative")
        if self.block_range[0] > self.block_range[1]:
            raise ValueError("block range start exceeds end")
        if self.per_node_tx_cap < 1:
            raise ValueError("per_node_tx_cap must be positive")


@dataclass
class CrawlResult:
    transactions: list[Transaction]
    errors: dict[str, str] = field(default_factory=dict)
    visited: list[str] = field(default_factory=list)


def crawl_neighborhood(cfg: FetchConfig, spec: CrawlSpec, client: EtherscanClient | None = None) -> CrawlResult:
    """Breadth-first crawl from the seeds; frontier processed in address order.

    Each account contributes at most ``per_node_tx_cap`` transactions. Failed
    accounts are listed in ``errors`` and the crawl continues.
    """
    client = client or EtherscanClient(cfg)
    seen_nodes: set[str] = set()
    by_hash: dict[str, Transaction] = {}
    result = CrawlResult([])
    frontier = sorted(spec.seeds)
    for level in range(spec.depth + 1):
        frontier = [a for a in frontier if a not in seen_nodes]
        if not frontier:
            break
        seen_nodes.update(frontier)

        def job(addr):
            try:
                return addr, client.account_transactions(addr, *spec.block_range, limit=spec.per_node_tx_cap), None
            except FetchError as exc:
                return addr, [], f"{type(exc).__name__}: {exc}"

        if cfg.workers > 1:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                fetched = list(pool.map(job, frontier))
        else:
            fetched = [job(a) for a in frontier]
        nxt: set[str] = set()
        for addr, txs, err in fetched:
            result.visited.append(addr)
            if err:
                result.errors[addr] = err
                log.warning("crawl: %s failed: %s", addr, err)
            for tx in txs:
                by_hash.setdefault(tx.hash, tx)
                nxt.add(tx.sender)
                nxt.add(tx.receiver)
        frontier = sorted(nxt)
    result.transactions = sorted(by_hash.values(), key=lambda t: (t.block, t.hash))
    return result
