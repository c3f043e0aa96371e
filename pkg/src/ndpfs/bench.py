"""Traffic comparison: move-the-data versus move-the-request.

One run ingests N synthetic items, then fetches the same matching subset two
ways and ledgers every byte that crosses the host/device boundary:

  * host-side arm: transfer all N items, filter here (`filter_on_host`);
  * device-side arm: push the predicate down (`get`), transfer only matches.

Items are generated so that exactly ceil(selectivity * N) of them match,
chosen by a seeded RNG, which makes the byte counts reproducible run to run.
Both arms must return identical rows before any numbers are reported.
"""

from __future__ import annotations

import math
import random
import time
from dataclasses import dataclass

from .client import Connection
from .errors import ValidationError
from .exprs import CmpOp, Compare, FieldRef, Lit
from .hostfs import open_dc
from .items import U64, ItemSchema, Kind, binary

# key u64 + val u64 + length-prefixed pad
_FIXED_ITEM_BYTES = 8 + 8 + 4
MIN_ITEM_BYTES = _FIXED_ITEM_BYTES + 1

MATCH_PREDICATE = Compare(CmpOp.EQ, FieldRef(1), Lit(Kind.U64, 1))

_INGEST_BATCH = 10_000


@dataclass(frozen=True)
class BenchReport:
    n: int
    selectivity: float
    item_bytes: int
    seed: int
    match_count: int
    classic_bytes: int
    dc_bytes: int
    classic_seconds: float
    dc_seconds: float

    @property
    def ratio(self) -> float:
        return self.classic_bytes / self.dc_bytes

    def table(self) -> str:
        rows = [
            ("items", f"{self.n}"),
            ("selectivity", f"{self.selectivity:g}"),
            ("item bytes", f"{self.item_bytes}"),
            ("matches", f"{self.match_count}"),
            ("host-side filter bytes", f"{self.classic_bytes}"),
            ("pushed-down filter bytes", f"{self.dc_bytes}"),
            ("byte ratio", f"{self.ratio:.2f}"),
            ("host-side seconds", f"{self.classic_seconds:.3f}"),
            ("pushed-down seconds", f"{self.dc_seconds:.3f}"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def bench_schema(item_bytes: int) -> ItemSchema:
    if item_bytes < MIN_ITEM_BYTES:
        raise ValidationError(
            f"item_bytes must be >= {MIN_ITEM_BYTES}", item_bytes=item_bytes)
    return ItemSchema([("key", U64), ("val", U64),
                       ("pad", binary(item_bytes - _FIXED_ITEM_BYTES))])


def generate_items(n: int, selectivity: float, item_bytes: int, seed: int):
    """N rows with exactly ceil(selectivity * n) having val == 1."""
    if n < 1:
        raise ValidationError("need at least one item", n=n)
    if not 0.0 <= selectivity <= 1.0:
        raise ValidationError("selectivity must be in [0, 1]",
                              selectivity=selectivity)
    pad = bytes(item_bytes - _FIXED_ITEM_BYTES)
    match_count = math.ceil(selectivity * n)
    matching = set(random.Random(seed).sample(range(n), match_count))
    return [(i, 1 if i in matching else 0, pad) for i in range(n)], match_count


def run_bench(conn: Connection, *, n: int, selectivity: float,
              item_bytes: int = 32, seed: int = 0,
              container: str | None = None) -> BenchReport:
    """Ingest, run both arms, check they agree, report ledgered bytes."""
    schema = bench_schema(item_bytes)
    items, match_count = generate_items(n, selectivity, item_bytes, seed)
    name = container or f"bench_{n}_{seed}"
    with open_dc(conn, name, create=True, schema=schema) as file:
        for base in range(0, n, _INGEST_BATCH):
            file.append(items[base:base + _INGEST_BATCH])

        started = time.perf_counter()
        classic_before = conn.ledger.total_bytes
        classic_rows = file.filter_on_host(MATCH_PREDICATE)
        classic_bytes = conn.ledger.total_bytes - classic_before
        classic_seconds = time.perf_counter() - started

        started = time.perf_counter()
        dc_before = conn.ledger.total_bytes
        dc_rows = file.read(file.get(MATCH_PREDICATE))
        dc_bytes = conn.ledger.total_bytes - dc_before
        dc_seconds = time.perf_counter() - started

    if classic_rows != dc_rows:
        raise RuntimeError("benchmark arms returned different rows")
    if len(dc_rows) != match_count:
        raise RuntimeError(f"expected {match_count} matches, "
                           f"got {len(dc_rows)}")
    return BenchReport(n=n, selectivity=selectivity, item_bytes=item_bytes,
                       seed=seed, match_count=match_count,
                       classic_bytes=classic_bytes, dc_bytes=dc_bytes,
                       classic_seconds=classic_seconds,
                       dc_seconds=dc_seconds)
