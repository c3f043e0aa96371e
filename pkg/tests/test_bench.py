"""Synthetic workload generation and the two-arm traffic comparison."""

import pytest

from ndpfs.bench import (
    MATCH_PREDICATE,
    BenchReport,
    bench_schema,
    generate_items,
    run_bench,
)
from ndpfs.client import Connection
from ndpfs.device import Device
from ndpfs.errors import ValidationError
from ndpfs.items import Kind, encode_item
from ndpfs.report import report_text, write_report
from ndpfs.server import loopback
from ndpfs.store import Volume


@pytest.fixture
def conn(tmp_path):
    vol = Volume.create(str(tmp_path / "vol"))
    device = Device(vol)
    c = Connection(loopback(device))
    yield c
    c.close()
    device.close()
    vol.close()


class TestGeneration:
    def test_item_bytes_is_the_encoded_size(self):
        schema = bench_schema(32)
        items, _ = generate_items(5, 0.5, 32, seed=0)
        for item in items:
            assert len(encode_item(schema, item)) == 32

    def test_other_sizes(self):
        for size in (21, 64, 200):
            schema = bench_schema(size)
            item = (0, 1, bytes(size - 20))
            assert len(encode_item(schema, item)) == size

    def test_too_small_item(self):
        with pytest.raises(ValidationError):
            bench_schema(20)

    @pytest.mark.parametrize("n,s,expect", [
        (10, 0.0, 0), (10, 1.0, 10), (100, 0.015, 2), (7, 0.5, 4),
    ])
    def test_exact_match_count(self, n, s, expect):
        items, count = generate_items(n, s, 32, seed=3)
        assert count == expect
        assert sum(val for _, val, _ in items) == expect

    def test_same_seed_same_items(self):
        a, _ = generate_items(500, 0.2, 32, seed=9)
        b, _ = generate_items(500, 0.2, 32, seed=9)
        assert a == b

    def test_different_seed_moves_matches(self):
        a, _ = generate_items(500, 0.2, 32, seed=1)
        b, _ = generate_items(500, 0.2, 32, seed=2)
        assert a != b

    def test_rejects_bad_parameters(self):
        with pytest.raises(ValidationError):
            generate_items(0, 0.5, 32, seed=0)
        with pytest.raises(ValidationError):
            generate_items(10, 1.5, 32, seed=0)

    def test_predicate_shape(self):
        assert MATCH_PREDICATE.rhs.kind is Kind.U64


class TestRunBench:
    def test_low_selectivity_favors_pushdown(self, conn):
        report = run_bench(conn, n=400, selectivity=0.05, seed=1)
        assert report.match_count == 20
        assert report.ratio > 2.0

    def test_full_selectivity_is_a_wash(self, conn):
        report = run_bench(conn, n=150, selectivity=1.0, seed=1)
        assert 0.8 <= report.ratio <= 1.25

    def test_bytes_are_ledger_deltas(self, conn):
        before = conn.ledger.total_bytes
        report = run_bench(conn, n=100, selectivity=0.1, seed=4)
        moved = conn.ledger.total_bytes - before
        assert report.classic_bytes + report.dc_bytes < moved
        assert report.classic_bytes > 100 * 32

    def test_same_seed_same_bytes_on_fresh_devices(self, tmp_path):
        def one_run(tag):
            vol = Volume.create(str(tmp_path / tag))
            device = Device(vol)
            c = Connection(loopback(device))
            try:
                return run_bench(c, n=300, selectivity=0.1, seed=7)
            finally:
                c.close()
                device.close()
                vol.close()

        first, second = one_run("a"), one_run("b")
        assert report_text(first) == report_text(second)
        assert (first.classic_bytes, first.dc_bytes) == \
               (second.classic_bytes, second.dc_bytes)


class TestReportFiles:
    REPORT = BenchReport(n=100, selectivity=0.25, item_bytes=32, seed=7,
                         match_count=25, classic_bytes=4000, dc_bytes=1000,
                         classic_seconds=1.0, dc_seconds=2.0)

    def test_exact_text_bytes(self):
        assert report_text(self.REPORT) == (
            "n=100\n"
            "selectivity=0.25\n"
            "item_bytes=32\n"
            "seed=7\n"
            "match_count=25\n"
            "classic_bytes=4000\n"
            "dc_bytes=1000\n"
            "ratio=4.000000\n")

    def test_wall_times_never_reach_the_file(self):
        slower = BenchReport(**{**self.REPORT.__dict__,
                                "classic_seconds": 99.0})
        assert report_text(slower) == report_text(self.REPORT)
        assert "seconds" not in report_text(self.REPORT)

    def test_table_does_show_times(self):
        table = self.REPORT.table()
        assert "seconds" in table
        assert "4.00" in table

    def test_write_report_renders_figures(self, tmp_path):
        out = tmp_path / "report.txt"
        written = write_report(self.REPORT, out)
        assert written[0] == out
        assert out.read_text().startswith("n=100\n")
        pngs = [p for p in written[1:]]
        assert [p.name for p in pngs] == ["report_bytes.png",
                                          "report_items.png"]
        for png in pngs:
            assert png.read_bytes()[:4] == b"\x89PNG"

    def test_figures_can_be_skipped(self, tmp_path):
        out = tmp_path / "bare.txt"
        assert write_report(self.REPORT, out, figures=False) == [out]
        assert list(tmp_path.iterdir()) == [out]
