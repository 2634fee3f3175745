import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from txscam.txgraph import Label, Transaction, build_graph  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

T0 = 1_600_000_000
DAY = 86_400


def addr(i: int) -> str:
    return "0x" + f"{i:040x}"


def tx(i, s, r, t, value=10**18, block=None):
    return Transaction(f"0x{i:064x}", addr(s), addr(r), value, t, i if block is None else block)


@pytest.fixture
def five_node_graph():
    """Small fixture: node 0 touches 1..4 at distinct times, plus a few side edges."""
    txs = [
        tx(1, 0, 1, T0 + 100),
        tx(2, 2, 0, T0 + 200),
        tx(3, 0, 3, T0 + 5 * DAY),
        tx(4, 4, 0, T0 + 9 * DAY),
        tx(5, 0, 1, T0 + 12 * DAY),
        tx(6, 1, 2, T0 + 3 * DAY),
        tx(7, 3, 4, T0 + 20 * DAY),
    ]
    return build_graph(txs, {addr(0): Label.WEB3SCAM, addr(4): Label.NORMAL})


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
