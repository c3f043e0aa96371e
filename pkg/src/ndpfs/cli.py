"""Command-line surface: volume admin, serving, ingest, queries, triggers,
and the traffic benchmark.

Commands that talk to a device accept either `--addr HOST:PORT` (a served
device, overridable by the NDPFS_DEVICE_ADDR environment variable) or
`--volume PATH` (opens the volume in-process behind a loopback transport).
`bench` additionally runs against a throwaway volume when given neither.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import os
import sys
import tempfile
import time

from . import protocol as p
from .bench import run_bench
from .client import Connection, connect
from .device import Device
from .errors import CsvParseError, ExprParseError, NdpError, ValidationError
from .exprs import decode_ast
from .exprtext import (
    parse_mutation,
    parse_predicate,
    parse_program,
    parse_schema_spec,
)
from .hostfs import DcFile, open_dc, resolve_device_addr
from .items import ItemSchema, Kind, validate_item
from .modes import Async, Delayed, Interrupt, Poll, Sync
from .report import write_report
from .server import TcpServer, loopback
from .store import Volume

_EVENTS = {"append": p.TriggerEvent.APPEND, "set": p.TriggerEvent.SET,
           "delete": p.TriggerEvent.DELETE}


# ---------------------------------------------------------------------------
# Device sessions

@contextlib.contextmanager
def device_session(addr: str | None, volume_path: str | None,
                   ephemeral: bool = False):
    """Yield a Connection per the module docstring's address rules."""
    with contextlib.ExitStack() as stack:
        resolved = resolve_device_addr(addr)
        if resolved:
            conn = connect(resolved)
            stack.callback(conn.close)
            yield conn
            return
        if volume_path is None:
            if not ephemeral:
                raise ValidationError(
                    "need --addr or --volume (or NDPFS_DEVICE_ADDR)")
            tmp = stack.enter_context(
                tempfile.TemporaryDirectory(prefix="ndpfs-"))
            vol = Volume.create(os.path.join(tmp, "volume"))
        else:
            vol = Volume.open(volume_path)
        stack.callback(vol.close)
        device = Device(vol)
        stack.callback(device.close)
        conn = Connection(loopback(device))
        stack.callback(conn.close)
        yield conn


# ---------------------------------------------------------------------------
# CSV ingestion

def ingest_csv(file: DcFile, csv_path, batch_rows: int = 1000) -> int:
    """Append rows in file order; each batch of `batch_rows` lands
    atomically, and a bad value rejects its whole batch."""
    schema = file.schema
    count = 0
    batch = []
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise CsvParseError("file has no header row", line=1)
        if tuple(header) != schema.names:
            raise CsvParseError(
                f"header {header} does not match fields "
                f"{list(schema.names)}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            batch.append(_parse_csv_row(schema, row, lineno))
            if len(batch) == batch_rows:
                file.append(batch)
                count += len(batch)
                batch = []
    if batch:
        file.append(batch)
        count += len(batch)
    return count


def _parse_csv_row(schema: ItemSchema, row: list[str], lineno: int) -> tuple:
    if len(row) != len(schema.names):
        raise CsvParseError(f"expected {len(schema.names)} values, "
                            f"got {len(row)}", line=lineno)
    values = []
    for (name, ftype), text in zip(schema.fields, row):
        values.append(_parse_csv_value(ftype.kind, text, lineno, name))
    item = tuple(values)
    try:
        validate_item(schema, item)
    except NdpError as exc:
        raise CsvParseError(str(exc), line=lineno,
                            column=exc.context.get("field", "")) from None
    return item


def _parse_csv_value(kind: Kind, text: str, lineno: int, name: str):
    try:
        if kind in (Kind.U64, Kind.I64):
            return int(text, 10)
        if kind is Kind.F64:
            return float(text)
        if kind is Kind.BOOL:
            if text not in ("true", "false"):
                raise ValueError("expected true or false")
            return text == "true"
        if kind is Kind.BYTES:
            return bytes.fromhex(text)
        return text
    except ValueError as exc:
        raise CsvParseError(f"cannot parse {text!r} as "
                            f"{kind.name.lower()}: {exc}",
                            line=lineno, column=name) from None


# ---------------------------------------------------------------------------
# Subcommands

def cmd_volume_create(args) -> int:
    Volume.create(args.path).close()
    print(f"created volume at {args.path}")
    return 0


def cmd_volume_info(args) -> int:
    vol = Volume.open(args.path)
    try:
        print(f"volume {args.path}")
        print(f"  watermark {vol.watermark}, "
              f"{len(vol.journal_pending())} journalled request(s) pending")
        names = vol.container_names()
        print(f"  {len(names)} container(s)")
        for cid, name in names:
            meta = vol.meta(cid)
            print(f"  [{cid}] {name}: {meta['live_count']} live of "
                  f"{meta['item_count']} item(s), "
                  f"generation {meta['generation']}, "
                  f"schema {schema_spec_text(vol.schema_of(cid))}")
    finally:
        vol.close()
    return 0


def schema_spec_text(schema: ItemSchema) -> str:
    parts = []
    for name, ftype in schema.fields:
        if ftype.max_len is None:
            parts.append(f"{name}:{ftype.kind.name.lower()}")
        else:
            parts.append(f"{name}:{ftype.kind.name.lower()}({ftype.max_len})")
    return ",".join(parts)


def cmd_serve(args) -> int:
    host, _, port = args.listen.rpartition(":")
    vol = Volume.open(args.path)
    device = Device(vol)
    server = TcpServer(device, host or "127.0.0.1", int(port))
    print(f"serving {args.path} on {server.address[0]}:{server.address[1]}",
          flush=True)
    try:
        while True:
            time.sleep(1)
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
        device.close()
        vol.close()
    return 0


def cmd_container_create(args) -> int:
    schema = parse_schema_spec(args.schema)
    with device_session(args.addr, args.volume) as conn:
        with open_dc(conn, args.name, create=True, schema=schema) as file:
            print(f"container {args.name} is id {file.container_id}")
    return 0


def cmd_ingest(args) -> int:
    with device_session(args.addr, args.volume) as conn:
        with open_dc(conn, args.name) as file:
            count = ingest_csv(file, args.csv)
    print(f"ingested {count} row(s)")
    return 0


def _pick_mode(args):
    if args.mode == "async":
        return Async()
    if args.mode == "delayed":
        return Delayed()
    if args.interrupt:
        return Sync(Interrupt())
    if args.poll_ms is not None:
        return Sync(Poll(args.poll_ms / 1000.0))
    return Sync(Poll())


def _print_rows(file: DcFile, rows) -> None:
    names = file.schema.names
    for idx, item in rows:
        rendered = ", ".join(f"{n}={v!r}" for n, v in zip(names, item))
        print(f"[{idx}] {rendered}")


def _print_result(file: DcFile, result) -> None:
    if isinstance(result, p.ScalarResult):
        print(result.value)
    elif isinstance(result, p.HandleInfo):
        print(f"{result.cardinality} item(s)")
        _print_rows(file, file.read(result))
    elif isinstance(result, p.SetResp):
        print(f"rewrote {result.count} item(s), "
              f"generation {result.generation}")
    else:
        print(result)


def cmd_query(args) -> int:
    mode = _pick_mode(args)
    with device_session(args.addr, args.volume) as conn:
        with open_dc(conn, args.name) as file:
            before = conn.ledger.snapshot()
            if args.verb == "get":
                _expect_exprs(args, 1)
                pred = parse_predicate(args.expr[0], file.schema)
                result = file.get(pred, mode=mode)
            elif args.verb == "set":
                _expect_exprs(args, 2)
                pred = parse_predicate(args.expr[0], file.schema)
                mut = parse_mutation(args.expr[1], file.schema)
                result = file.set(pred, mut, mode=mode)
            else:
                _expect_exprs(args, 1)
                prog = parse_program(args.expr[0], file.schema)
                result = file.execute(prog, mode=mode)

            if isinstance(mode, Delayed):
                print(f"journalled as seq {result}")
            elif isinstance(mode, Async):
                print(f"ticket {result}")
                record = file.wait_completion(result)
                _print_result(file, record.response())
            else:
                _print_result(file, result)
            delta = conn.ledger.snapshot()
    print(f"traffic: {delta.bytes_sent - before.bytes_sent} B sent, "
          f"{delta.bytes_received - before.bytes_received} B received")
    return 0


def _expect_exprs(args, count: int) -> None:
    if len(args.expr) != count:
        raise ValidationError(
            f"{args.verb} takes {count} expression argument(s), "
            f"got {len(args.expr)}")


def cmd_trigger_add(args) -> int:
    with device_session(args.addr, args.volume) as conn:
        with open_dc(conn, args.name) as file:
            pred = parse_predicate(args.where, file.schema)
            if ":=" in args.action:
                action = parse_mutation(args.action, file.schema)
            else:
                action = parse_program(args.action, file.schema)
            tid = file.add_trigger(_EVENTS[args.event], pred, action,
                                   enabled=not args.disabled)
    print(f"trigger {tid}")
    return 0


def cmd_trigger_list(args) -> int:
    with device_session(args.addr, args.volume) as conn:
        with open_dc(conn, args.name) as file:
            for tid, reg in file.triggers():
                state = "enabled" if reg.enabled else "disabled"
                print(f"trigger {tid}: on {reg.event.name.lower()}, {state}")
                print(f"  where  {decode_ast(reg.predicate)}")
                print(f"  action {decode_ast(reg.action)}")
    return 0


def cmd_trigger_rm(args) -> int:
    with device_session(args.addr, args.volume) as conn:
        conn.call(p.TriggerUnregisterReq(args.trigger_id))
    print(f"removed trigger {args.trigger_id}")
    return 0


def cmd_bench(args) -> int:
    with device_session(args.addr, args.volume, ephemeral=True) as conn:
        report = run_bench(conn, n=args.n, selectivity=args.selectivity,
                           item_bytes=args.item_bytes, seed=args.seed)
    print(report.table())
    if args.out:
        for path in write_report(report, args.out):
            print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# Argument wiring

def _add_device_args(sub) -> None:
    sub.add_argument("--addr", help="served device HOST:PORT")
    sub.add_argument("--volume", help="open this volume in-process")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ndpfs",
        description="storage stack where filters run next to the data")
    commands = parser.add_subparsers(dest="command", required=True)

    volume = commands.add_parser("volume", help="create or inspect volumes")
    volume_sub = volume.add_subparsers(dest="volume_command", required=True)
    create = volume_sub.add_parser("create")
    create.add_argument("path")
    create.set_defaults(func=cmd_volume_create)
    info = volume_sub.add_parser("info")
    info.add_argument("path")
    info.set_defaults(func=cmd_volume_info)

    serve = commands.add_parser("serve", help="serve a volume over TCP")
    serve.add_argument("path")
    serve.add_argument("--listen", default="127.0.0.1:0",
                       help="HOST:PORT, port 0 picks a free port")
    serve.set_defaults(func=cmd_serve)

    container = commands.add_parser("container", help="manage containers")
    container_sub = container.add_subparsers(dest="container_command",
                                             required=True)
    ccreate = container_sub.add_parser("create")
    ccreate.add_argument("name")
    ccreate.add_argument("--schema", required=True,
                         help="name:type pairs, e.g. city:utf8(16),temp:f64")
    _add_device_args(ccreate)
    ccreate.set_defaults(func=cmd_container_create)

    ingest = commands.add_parser("ingest", help="append CSV rows")
    ingest.add_argument("name")
    ingest.add_argument("csv")
    _add_device_args(ingest)
    ingest.set_defaults(func=cmd_ingest)

    query = commands.add_parser("query", help="run get, set or execute")
    query.add_argument("name")
    query.add_argument("verb", choices=["get", "set", "execute"])
    query.add_argument("expr", nargs="+",
                       help="predicate; for set: predicate then mutation")
    query.add_argument("--mode", choices=["sync", "async", "delayed"],
                       default="sync")
    wait = query.add_mutually_exclusive_group()
    wait.add_argument("--poll-ms", type=float,
                      help="sync completion poll interval")
    wait.add_argument("--interrupt", action="store_true",
                      help="sync completion via pushed notification")
    _add_device_args(query)
    query.set_defaults(func=cmd_query)

    trigger = commands.add_parser("trigger", help="manage triggers")
    trigger_sub = trigger.add_subparsers(dest="trigger_command", required=True)
    tadd = trigger_sub.add_parser("add")
    tadd.add_argument("name")
    tadd.add_argument("--event", choices=sorted(_EVENTS), required=True)
    tadd.add_argument("--where", required=True, help="predicate text")
    tadd.add_argument("--action", required=True,
                      help="mutation (with :=) or program text")
    tadd.add_argument("--disabled", action="store_true")
    _add_device_args(tadd)
    tadd.set_defaults(func=cmd_trigger_add)
    tlist = trigger_sub.add_parser("list")
    tlist.add_argument("name")
    _add_device_args(tlist)
    tlist.set_defaults(func=cmd_trigger_list)
    trm = trigger_sub.add_parser("rm")
    trm.add_argument("trigger_id", type=int)
    _add_device_args(trm)
    trm.set_defaults(func=cmd_trigger_rm)

    bench = commands.add_parser(
        "bench", help="byte traffic of host-side vs pushed-down filtering")
    bench.add_argument("--n", type=int, required=True)
    bench.add_argument("--selectivity", type=float, required=True)
    bench.add_argument("--item-bytes", type=int, default=32)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--out", help="report file; figures land alongside")
    _add_device_args(bench)
    bench.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ExprParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(exc.caret(), file=sys.stderr)
        return 2
    except CsvParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NdpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
