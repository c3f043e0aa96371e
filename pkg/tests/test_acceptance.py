"""End-to-end gates for the stack, one test per promise.

Every expected value here comes from the hand-rolled oracles in
`reference.py` or from exact bookkeeping done by the test itself, never
from the code under test.  The first six checks are parameterized over a
transport name so the final test can replay them across a real TCP
socket; the fuzz and traffic gates run the shared server loop directly.
"""

import contextlib
import math
import os
import random
import shutil
import socket
import time

import pytest

import reference
from ndpfs import protocol as p
from ndpfs import wire
from ndpfs.bench import run_bench
from ndpfs.client import Connection, HostTrafficLedger
from ndpfs.device import Device
from ndpfs.errors import ErrFrozen, ErrQueueFull, NdpError
from ndpfs.exprs import (
    Arith,
    ArithOp,
    CmpOp,
    Compare,
    Count,
    FieldRef,
    Lit,
    Logic,
    LogicOp,
    Max,
    Min,
    Mutation,
    Not,
    SortBy,
    Sum,
    encode_ast,
)
from ndpfs.hostfs import open_dc
from ndpfs.items import BOOL, F64, I64, U64, ItemSchema, Kind, binary, utf8
from ndpfs.items import encode_item as sys_encode_item
from ndpfs.modes import Async, Delayed, Interrupt, Poll, Sync
from ndpfs.server import TcpServer, loopback
from ndpfs.store import SimulatedCrash, Volume


@contextlib.contextmanager
def stack(vol_dir, transport, **device_kw):
    """A served volume plus one client connection over `transport`."""
    vol_dir = str(vol_dir)
    if os.path.exists(os.path.join(vol_dir, "superblock.ndp")):
        vol = Volume.open(vol_dir)
    else:
        vol = Volume.create(vol_dir)
    device = Device(vol, **device_kw)
    server = None
    if transport == "tcp":
        server = TcpServer(device)
        sock = socket.create_connection(server.address)
    else:
        sock = loopback(device)
    conn = Connection(sock, HostTrafficLedger())
    try:
        yield conn, device, vol
    finally:
        conn.close()
        if server is not None:
            server.close()
        device.close()
        vol.close()


def enc_rows(schema, rows):
    """Byte-level view of (index, item) pairs; NaN-safe equality."""
    kinds = [ft.kind for _, ft in schema.fields]
    return [(idx, reference.encode_item(kinds, item)) for idx, item in rows]


def ref_scalar(fields, prog, pairs):
    """Independent fold for a scalar program over (index, item) pairs."""
    if isinstance(prog, Count):
        return Kind.U64, len(pairs)
    kind = fields[prog.field][1]
    if isinstance(prog, Sum):
        total = 0.0 if kind is Kind.F64 else 0
        for _, item in pairs:
            total = reference.ref_arith(ArithOp.ADD, kind, total,
                                        item[prog.field])
        return kind, total
    if not pairs:
        raise reference.RefError("nothing to aggregate")
    picker = reference.ref_min_index if isinstance(prog, Min) \
        else reference.ref_max_index
    return kind, picker(kind, pairs, prog.field)[1][prog.field]


# --- randomized request material -------------------------------------------

ORACLE_SCHEMA = ItemSchema([
    ("u", U64), ("i", I64), ("f", F64), ("b", BOOL),
    ("s", utf8(8)), ("raw", binary(4)),
])
ORACLE_FIELDS = [(n, ft.kind) for n, ft in ORACLE_SCHEMA.fields]

U_POOL = (0, 1, 2, 3, 7, 40, 2**40, 2**64 - 1)
I_POOL = (-6, -1, 0, 1, 2, 5, 99, -2**63 + 1)
F_POOL = (0.0, -0.5, 1.5, 3.25, 99.0, math.inf, -math.inf, math.nan)
S_POOL = ("ash", "birch", "cedar", "fir", "oak", "")
RAW_POOL = (b"\x00\x00\x00\x00", b"beef", b"\xff\xff\xff\xff", b"0123")
LIT_POOLS = {Kind.U64: U_POOL, Kind.I64: I_POOL, Kind.F64: F_POOL,
             Kind.UTF8: S_POOL}
SMALL = {Kind.U64: (0, 1, 2, 3, 10), Kind.I64: (-3, -1, 0, 1, 2, 7),
         Kind.F64: (0.0, 0.5, -1.25, 2.0)}

NUMERIC_FIELDS = (0, 1, 2)
SORTABLE_FIELDS = (0, 1, 2, 4)          # numeric or utf8
CMP_FIELDS = (0, 1, 2, 3, 4)            # raw has no literal form


def random_item(rng):
    return (rng.choice(U_POOL), rng.choice(I_POOL), rng.choice(F_POOL),
            rng.random() < 0.5, rng.choice(S_POOL), rng.choice(RAW_POOL))


def rand_leaf(rng):
    fi = rng.choice(CMP_FIELDS)
    kind = ORACLE_FIELDS[fi][1]
    if kind is Kind.BOOL:
        if rng.random() < 0.4:
            return FieldRef(fi)
        return Compare(rng.choice((CmpOp.EQ, CmpOp.NE)), FieldRef(fi),
                       Lit(Kind.BOOL, rng.random() < 0.5))
    op = rng.choice(tuple(CmpOp))
    lit = Lit(kind, rng.choice(LIT_POOLS[kind]))
    if rng.random() < 0.25:
        return Compare(op, lit, FieldRef(fi))
    return Compare(op, FieldRef(fi), lit)


def rand_pred(rng, depth=0):
    r = rng.random()
    if depth >= 2 or r < 0.5:
        return rand_leaf(rng)
    if r < 0.72:
        return Logic(LogicOp.AND, rand_pred(rng, depth + 1),
                     rand_pred(rng, depth + 1))
    if r < 0.9:
        return Logic(LogicOp.OR, rand_pred(rng, depth + 1),
                     rand_pred(rng, depth + 1))
    return Not(rand_pred(rng, depth + 1))


def rand_assign(rng, fi):
    kind = ORACLE_FIELDS[fi][1]
    if kind is Kind.BOOL:
        return fi, Lit(Kind.BOOL, rng.random() < 0.5)
    if kind is Kind.UTF8:
        return fi, Lit(Kind.UTF8, rng.choice(S_POOL))
    if rng.random() < 0.2:
        return fi, Lit(kind, rng.choice(SMALL[kind]))
    op = rng.choice((ArithOp.ADD, ArithOp.SUB, ArithOp.MUL, ArithOp.DIV))
    pool = SMALL[kind]
    if op is ArithOp.DIV and rng.random() < 0.8:
        pool = tuple(v for v in pool if v != 0)   # a few zero divisors stay
    lit = Lit(kind, rng.choice(pool))
    if rng.random() < 0.25:
        return fi, Arith(op, lit, FieldRef(fi))
    return fi, Arith(op, FieldRef(fi), lit)


def rand_mutation(rng):
    n = 1 if rng.random() < 0.7 else 2
    return Mutation(tuple(rand_assign(rng, fi)
                          for fi in rng.sample(CMP_FIELDS, n)))


def rand_program(rng):
    r = rng.random()
    if r < 0.15:
        return Count()
    if r < 0.4:
        return Sum(rng.choice(NUMERIC_FIELDS))
    if r < 0.55:
        return Min(rng.choice(NUMERIC_FIELDS))
    if r < 0.7:
        return Max(rng.choice(NUMERIC_FIELDS))
    return SortBy(rng.choice(SORTABLE_FIELDS), rng.random() < 0.5)


# --- 1. device-side results match independent oracles ----------------------

ORACLE_SIZES = {"big": 10_000, "mid_a": 2_000, "mid_b": 800, "mid_c": 400,
                "small_a": 150, "small_b": 150, "small_c": 40, "tiny": 12,
                "empty": 0}


def check_pushdown_matches_oracles(tmp, transport):
    rng = random.Random(0xC1)
    with stack(tmp / "vol", transport) as (conn, device, vol):
        files, mirror = {}, {}
        for name, size in ORACLE_SIZES.items():
            f = open_dc(conn, name, create=True, schema=ORACLE_SCHEMA)
            items = [random_item(rng) for _ in range(size)]
            for k in range(0, size, 2500):
                f.append(items[k:k + 2500])
            files[name] = f
            mirror[name] = list(enumerate(items))
        names = list(ORACLE_SIZES)
        weights = [1 if ORACLE_SIZES[n] >= 10_000 or ORACLE_SIZES[n] == 0
                   else 2 for n in names]

        for case in range(1000):
            name = rng.choices(names, weights)[0]
            f, live = files[name], mirror[name]
            roll = rng.random()
            if roll < 0.45:
                pred = rand_pred(rng)
                want = [(idx, it) for idx, it in live
                        if reference.ref_eval(ORACLE_FIELDS, it, pred)]
                handle = f.get(pred)
                assert handle.cardinality == len(want)
                got = f.read(handle)
                assert enc_rows(ORACLE_SCHEMA, got) == \
                    enc_rows(ORACLE_SCHEMA, want)
            elif roll < 0.75:
                pred, mut = rand_pred(rng), rand_mutation(rng)
                matched = [(idx, it) for idx, it in live
                           if reference.ref_eval(ORACLE_FIELDS, it, pred)]
                try:
                    rewritten = [(idx,
                                  reference.ref_mutation(ORACLE_FIELDS, it,
                                                         mut))
                                 for idx, it in matched]
                except reference.RefError:
                    with pytest.raises(NdpError):
                        f.set(pred, mut)
                else:
                    resp = f.set(pred, mut)
                    assert resp.count == len(matched)
                    if matched:
                        new = dict(rewritten)
                        mirror[name] = [(idx, new.get(idx, it))
                                        for idx, it in live]
            else:
                prog = rand_program(rng)
                if isinstance(prog, SortBy):
                    kind = ORACLE_FIELDS[prog.field][1]
                    want = reference.ref_sortby(kind, live, prog.field,
                                                prog.descending)
                    got = f.read(f.execute(prog))
                    assert enc_rows(ORACLE_SCHEMA, got) == \
                        enc_rows(ORACLE_SCHEMA, want)
                else:
                    try:
                        kind, value = ref_scalar(ORACLE_FIELDS, prog, live)
                    except reference.RefError:
                        with pytest.raises(NdpError):
                            f.execute(prog)
                    else:
                        res = f.execute(prog)
                        assert res.kind is kind
                        assert reference.encode_scalar(kind, res.value) == \
                            reference.encode_scalar(kind, value)
            live = mirror[name]
            if case % 12 == 5 and live:
                victims = rng.sample([idx for idx, _ in live],
                                     min(3, len(live)))
                assert f.delete(victims).count == len(victims)
                gone = set(victims)
                mirror[name] = [(idx, it) for idx, it in live
                                if idx not in gone]
            if case % 100 == 99:
                spot = rng.choice([n for n in names
                                   if ORACLE_SIZES[n] <= 2000])
                assert enc_rows(ORACLE_SCHEMA, files[spot].read_all()) == \
                    enc_rows(ORACLE_SCHEMA, mirror[spot])

        for name in names:
            assert enc_rows(ORACLE_SCHEMA, files[name].read_all()) == \
                enc_rows(ORACLE_SCHEMA, mirror[name])
        for f in files.values():
            f.close()


def test_device_results_match_host_oracles(tmp_path):
    check_pushdown_matches_oracles(tmp_path, "loopback")


# --- 2. every execution mode converges on identical bytes ------------------

MODE_MAKERS = {
    "poll": lambda: Sync(Poll()),
    "interrupt": lambda: Sync(Interrupt()),
    "async": lambda: Async(),
    "delayed": lambda: Delayed(),
}


def on_disk_state(run_dir):
    """Container and catalog bytes with volatile fields masked out:
    sequence counters (superblock), the delayed queue (journal), and the
    replay watermark plus its checksum inside the catalog."""
    out = {}
    for fn in sorted(os.listdir(run_dir)):
        if fn.startswith(("superblock", "journal")):
            continue
        raw = open(os.path.join(run_dir, fn), "rb").read()
        if fn == "catalog.ndp":
            raw = raw[:8] + b"\0" * 8 + raw[16:-4]
        out[fn] = raw
    return out


def check_modes_converge(tmp, transport):
    rng = random.Random(0xC2)
    seed_dir = tmp / "seed"
    with stack(seed_dir, "loopback") as (conn, device, vol):
        fa = open_dc(conn, "alpha", create=True, schema=ORACLE_SCHEMA)
        fb = open_dc(conn, "beta", create=True, schema=ORACLE_SCHEMA)
        fa.append([random_item(rng) for _ in range(140)])
        fb.append([random_item(rng) for _ in range(60)])
        fa.close()
        fb.close()

    plan = []
    for _ in range(100):
        target = "alpha" if rng.random() < 0.6 else "beta"
        if rng.random() < 0.55:
            plan.append(("set", target, rand_pred(rng), rand_mutation(rng)))
        else:
            plan.append(("execute", target, rand_program(rng),
                         rng.random() < 0.2))

    states = {}
    for mode_name, make in MODE_MAKERS.items():
        run_dir = tmp / f"run_{mode_name}"
        shutil.copytree(seed_dir, run_dir)
        with stack(run_dir, transport) as (conn, device, vol):
            files = {"alpha": open_dc(conn, "alpha"),
                     "beta": open_dc(conn, "beta")}
            for verb, target, *args in plan:
                f = files[target]
                if verb == "set":
                    run = lambda m: f.set(args[0], args[1], m)
                else:
                    others = ((files["beta" if target == "alpha"
                                     else "alpha"],) if args[1] else ())
                    run = lambda m: f.execute(args[0], m, others=others)
                if mode_name == "async":
                    f.wait_completion(run(Async()))     # errors stay in the record
                elif mode_name == "delayed":
                    run(Delayed())
                else:
                    try:
                        run(make())
                    except NdpError:
                        pass                            # same abort in every mode
            files["alpha"].flush_delayed()
            for f in files.values():
                f.close()
        states[mode_name] = on_disk_state(run_dir)

    base = states["poll"]
    assert set(base) >= {"c1.dat", "c1.idx", "catalog.ndp"}
    for mode_name, snap in states.items():
        assert snap == base, f"{mode_name} run diverged from poll run"


def test_execution_modes_converge_on_identical_bytes(tmp_path):
    check_modes_converge(tmp_path, "loopback")


# --- 3. delayed replay is exactly-once across crashes ----------------------

REPLAY_SCHEMA = ItemSchema([("k", U64), ("v", I64), ("tag", utf8(6))])
REPLAY_HOOKS = ("replay.pre_apply", "commit.pre_rename", "commit.post_rename")


def replay_requests():
    """Deterministic mutating mix against cid 1; one request always errors."""
    def krange(lo, hi):
        return Logic(LogicOp.AND,
                     Compare(CmpOp.GE, FieldRef(0), Lit(Kind.U64, lo)),
                     Compare(CmpOp.LT, FieldRef(0), Lit(Kind.U64, hi)))

    bump = Mutation(((1, Arith(ArithOp.ADD, FieldRef(1), Lit(Kind.I64, 5))),))
    broken = Mutation(((1, Arith(ArithOp.DIV, FieldRef(1), Lit(Kind.I64, 0))),))
    reqs = []
    for j in range(8):
        mut = broken if j == 5 else bump
        reqs.append(p.SetReq(1, encode_ast(krange(j * 11, j * 11 + 17)),
                             encode_ast(mut)))
    for j in range(5):
        rows = [(1000 + 10 * j + t, -3 * j, f"new{j}")
                for t in range(2 + j % 3)]
        reqs.append(p.AppendReq(1, tuple(sys_encode_item(REPLAY_SCHEMA, r)
                                         for r in rows)))
    for idxs in ((5, 17), (40,), (63, 64, 9)):
        reqs.append(p.DeleteReq(1, idxs))
    for prog in (Count(), Sum(1)):
        reqs.append(p.ExecuteReq(encode_ast(prog), (1,)))
    random.Random(0xC3).shuffle(reqs)
    return reqs


def volume_files(run_dir):
    out = {}
    for fn in sorted(os.listdir(str(run_dir))):
        if fn.startswith("superblock"):
            continue
        out[fn] = open(os.path.join(str(run_dir), fn), "rb").read()
    return out


def check_replay_exactly_once(tmp, transport):
    base = tmp / "base"
    with stack(base, transport) as (conn, device, vol):
        f = open_dc(conn, "events", create=True, schema=REPLAY_SCHEMA)
        f.append([(i, 100 - i, "seed") for i in range(100)])
        f.close()
    reqs = replay_requests()

    # journal all of them through the transport, apply none
    armed = tmp / "armed"
    shutil.copytree(base, armed)
    with stack(armed, transport) as (conn, device, vol):
        seqs = []
        for req in reqs:
            mt, payload = p.encode_request(req)
            seqs.append(conn.call(p.DelayedEnqueueReq(mt, payload)).seq)
        assert seqs == sorted(set(seqs))
    probe = Volume.open(str(armed))
    assert len(probe.journal_pending()) == len(reqs)
    assert probe.watermark == 0
    probe.close()

    # state after each durable prefix, computed one request at a time
    incr = tmp / "incr"
    shutil.copytree(base, incr)
    vol = Volume.open(str(incr))
    device = Device(vol)
    hashes = [reference.state_hash(vol)]
    for req in reqs:
        device.enqueue_delayed(req)
        device.flush_delayed()
        hashes.append(reference.state_hash(vol))
    device.close()
    vol.close()

    # crash-free recovery of the armed journal is the byte-level baseline
    clean = tmp / "clean"
    shutil.copytree(armed, clean)
    vol = Volume.open(str(clean))
    device = Device(vol)
    assert vol.watermark == seqs[-1]
    assert reference.state_hash(vol) == hashes[-1]
    device.close()
    vol.close()
    baseline_files = volume_files(clean)

    count_dir = tmp / "count"
    shutil.copytree(armed, count_dir)
    vol = Volume.open(str(count_dir))
    fired = []
    for h in REPLAY_HOOKS:
        vol.hooks[h] = lambda name, info: fired.append(name)
    Device(vol).close()
    vol.close()
    flush_points = len(fired)
    assert flush_points + 2 * len(reqs) >= 50

    # kill recovery at every apply/commit boundary, then recover for real
    for point in range(1, flush_points + 1):
        run = tmp / "crash"
        shutil.copytree(armed, run)
        vol = Volume.open(str(run))
        seen = [0]

        def boom(name, info, *, stop=point, seen=seen):
            seen[0] += 1
            if seen[0] == stop:
                raise SimulatedCrash(f"{name} #{stop}")

        for h in REPLAY_HOOKS:
            vol.hooks[h] = boom
        with pytest.raises(SimulatedCrash):
            Device(vol)
        vol.close()

        vol = Volume.open(str(run))
        device = Device(vol)
        assert reference.state_hash(vol) == hashes[-1], f"point {point}"
        assert vol.watermark == seqs[-1]
        device.close()
        vol.close()
        assert volume_files(run) == baseline_files, f"point {point}"
        shutil.rmtree(run)

    # kill the host around each journal append; the durable prefix replays
    for i in range(1, len(reqs) + 1):
        for hook, durable in (("journal.pre_append", i - 1),
                              ("journal.post_append", i)):
            run = tmp / "enq"
            shutil.copytree(base, run)
            vol = Volume.open(str(run))
            device = Device(vol)
            seen = [0]

            def boom(name, info, *, stop=i, seen=seen):
                seen[0] += 1
                if seen[0] == stop:
                    raise SimulatedCrash(f"{name} #{stop}")

            vol.hooks[hook] = boom
            with pytest.raises(SimulatedCrash):
                for req in reqs:
                    device.enqueue_delayed(req)
            device.close()
            vol.close()

            vol = Volume.open(str(run))
            device = Device(vol)
            assert reference.state_hash(vol) == hashes[durable], \
                f"{hook} at request {i}"
            device.close()
            vol.close()
            shutil.rmtree(run)


def test_delayed_replay_is_exactly_once_across_crashes(tmp_path):
    check_replay_exactly_once(tmp_path, "loopback")


# --- 4. async admission stops exactly at the queue bound -------------------

def check_queue_admission(tmp, transport):
    with stack(tmp / "vol", transport) as (conn, device, vol):
        f = open_dc(conn, "q", create=True, schema=REPLAY_SCHEMA)
        f.append([(i, i, "row") for i in range(4)])
        device.pause()

        tickets = [f.execute(Count(), Async()) for _ in range(32)]
        assert tickets == sorted(set(tickets))
        with pytest.raises(ErrQueueFull):
            f.execute(Count(), Async())

        device.step(1)
        rec = f.wait_completion(tickets[0])
        assert rec.ok and rec.response().value == 4
        assert f.poll_completion(tickets[0]) is None    # handed out only once

        extra = f.execute(Count(), Async())             # freed slot admits one
        with pytest.raises(ErrQueueFull):
            f.execute(Count(), Async())

        device.resume()
        for t in tickets[1:] + [extra]:
            assert f.wait_completion(t).ok
        f.close()


def test_async_admission_stops_exactly_at_queue_depth(tmp_path):
    check_queue_admission(tmp_path, "loopback")


# --- 5. a frozen range is immutable under churn -----------------------------

FREEZE_SCHEMA = ItemSchema([("g", U64), ("x", F64), ("tag", utf8(5))])


def check_frozen_view(tmp, transport):
    rng = random.Random(0xC5)
    with stack(tmp / "vol", transport) as (conn, device, vol):
        f = open_dc(conn, "cold", create=True, schema=FREEZE_SCHEMA)
        f.append([(i, i * 0.5, "old") for i in range(300)])
        token = f.freeze()
        assert (token.lo, token.hi) == (0, 300)

        pred = Compare(CmpOp.LT, FieldRef(0), Lit(Kind.U64, 17))
        frozen_rows = enc_rows(FREEZE_SCHEMA, f.read(f.get(pred, token=token)))
        assert len(frozen_rows) == 17

        # 1,000 appended items, some of which would match the predicate
        for k in range(100):
            f.append([(rng.choice((3, 7, 1000 + 10 * k + t)),
                       rng.random(), "new") for t in range(10)])
        assert enc_rows(FREEZE_SCHEMA,
                        f.read(f.get(pred, token=token))) == frozen_rows
        assert f.get(pred).cardinality > 17     # the live view does move

        # touching only appended items is legal while the token lives
        calm = Mutation(((1, Arith(ArithOp.MUL, FieldRef(1), Lit(Kind.F64, 1.0))),))
        assert f.set(Compare(CmpOp.EQ, FieldRef(2), Lit(Kind.UTF8, "new")),
                     calm).count == 1000

        snap = reference.state_hash(vol)
        bump = Mutation(((1, Arith(ArithOp.ADD, FieldRef(1), Lit(Kind.F64, 1.0))),))
        for k in range(20):
            target = rng.randrange(300)
            if k % 2:
                with pytest.raises(ErrFrozen):
                    f.set(Compare(CmpOp.EQ, FieldRef(0), Lit(Kind.U64, target)),
                          bump)
            else:
                with pytest.raises(ErrFrozen):
                    f.delete([target])
        # a request straddling frozen and fresh items fails whole
        with pytest.raises(ErrFrozen):
            f.set(Logic(LogicOp.OR,
                        Compare(CmpOp.EQ, FieldRef(0), Lit(Kind.U64, 5)),
                        Compare(CmpOp.EQ, FieldRef(2), Lit(Kind.UTF8, "new"))),
                  bump)
        assert reference.state_hash(vol) == snap
        assert enc_rows(FREEZE_SCHEMA,
                        f.read(f.get(pred, token=token))) == frozen_rows

        f.unfreeze(token)
        assert f.set(Compare(CmpOp.EQ, FieldRef(0), Lit(Kind.U64, 5)),
                     bump).count >= 1
        f.close()


def test_frozen_range_stays_immutable_under_churn(tmp_path):
    check_frozen_view(tmp_path, "loopback")


# --- 6. the trigger log equals a brute-force prediction --------------------

TRIG_SCHEMA = ItemSchema([("k", U64), ("n", I64), ("flag", BOOL),
                          ("tag", utf8(6))])
TRIG_FIELDS = [(n, ft.kind) for n, ft in TRIG_SCHEMA.fields]
TAG_POOL = ("a", "bb", "ccc", "dddd")

# scalar log payloads on the wire: one tag byte, then the value
SCALAR_TAGS = {Kind.U64: b"\x02", Kind.I64: b"\x03", Kind.F64: b"\x04"}


def wire_scalar(kind, value):
    return SCALAR_TAGS[kind] + reference.encode_scalar(kind, value)


def rand_trig_item(rng):
    return (rng.randrange(0, 620), rng.randrange(-20, 21),
            rng.random() < 0.4, rng.choice(TAG_POOL))


def predict_fires(log, regs, event, affected, seq, staging):
    """The device's contract, replayed with the reference evaluators:
    registrations fire in id order against the causing images, failed
    actions are skipped silently, rewrites land last-writer-wins."""
    for tid, ev, pred, action, enabled in sorted(regs):
        if ev != event or not enabled:
            continue
        matched = [(idx, it) for idx, it in affected
                   if reference.ref_eval(TRIG_FIELDS, it, pred)]
        if not matched:
            continue
        if isinstance(action, Mutation):
            for idx, it in matched:
                try:
                    new_item = reference.ref_mutation(TRIG_FIELDS, it, action)
                except reference.RefError:
                    continue
                staging[idx] = new_item
                log.append((tid, seq, event, reference.u64(idx)))
        else:
            try:
                kind, value = ref_scalar(TRIG_FIELDS, action, matched)
            except reference.RefError:
                continue
            log.append((tid, seq, event, wire_scalar(kind, value)))


def check_trigger_log_prediction(tmp, transport):
    rng = random.Random(0xC6)
    ev_append = int(p.TriggerEvent.APPEND)
    ev_set = int(p.TriggerEvent.SET)
    ev_delete = int(p.TriggerEvent.DELETE)

    reg_plan = [
        # rewrites items that keep matching their own predicate: no cascade
        (ev_append, Compare(CmpOp.LT, FieldRef(0), Lit(Kind.U64, 50)),
         Mutation(((1, Arith(ArithOp.MUL, FieldRef(1), Lit(Kind.I64, 2))),)), True),
        (ev_append, FieldRef(2), Sum(1), True),
        (ev_set, Compare(CmpOp.GE, FieldRef(1), Lit(Kind.I64, 0)),
         Mutation(((3, Lit(Kind.UTF8, "seen")),)), True),
        (ev_set, Compare(CmpOp.NE, FieldRef(3), Lit(Kind.UTF8, "zzz")),
         Count(), False),                       # disabled: must never log
        (ev_delete, Compare(CmpOp.GT, FieldRef(0), Lit(Kind.U64, 10)),
         Max(0), True),
        # matches exactly the items its action then divides by zero on
        (ev_set, Compare(CmpOp.EQ, FieldRef(1), Lit(Kind.I64, 0)),
         Mutation(((1, Arith(ArithOp.DIV, Lit(Kind.I64, 7), FieldRef(1))),)), True),
    ]

    with stack(tmp / "vol", transport) as (conn, device, vol):
        f = open_dc(conn, "feed", create=True, schema=TRIG_SCHEMA)
        start = [rand_trig_item(rng) for _ in range(40)]
        f.append(start)     # before any registration: must not log

        model = {idx: it for idx, it in enumerate(start)}
        total = len(start)
        expected = []
        regs = []
        for event, pred, action, enabled in reg_plan:
            tid = f.add_trigger(p.TriggerEvent(event), pred, action,
                                enabled=enabled)
            regs.append((tid, event, pred, action, enabled))

        for step in range(50):
            if step == 25:
                gone = regs.pop(2)              # the tag := "seen" rewriter
                f.remove_trigger(gone[0])
                tid = f.add_trigger(p.TriggerEvent.APPEND,
                                    Compare(CmpOp.GE, FieldRef(0),
                                            Lit(Kind.U64, 500)),
                                    Min(1))
                regs.append((tid, ev_append,
                             Compare(CmpOp.GE, FieldRef(0), Lit(Kind.U64, 500)),
                             Min(1), True))
            roll = rng.random()
            staging = {}
            if roll < 0.45 or not model:
                items = [rand_trig_item(rng) for _ in range(rng.randrange(1, 5))]
                seq = f.append(items, Async())
                rec = f.wait_completion(seq)
                assert rec.ok
                affected = [(total + j, it) for j, it in enumerate(items)]
                predict_fires(expected, regs, ev_append, affected,
                              rec.seq, staging)
                for idx, it in affected:
                    model[idx] = staging.get(idx, it)
                total += len(items)
            elif roll < 0.8:
                fi = rng.choice((0, 1, 2))
                kind = TRIG_FIELDS[fi][1]
                lits = {Kind.U64: rng.randrange(0, 620),
                        Kind.I64: rng.randrange(-20, 21),
                        Kind.BOOL: rng.random() < 0.5}
                pred = Compare(rng.choice((CmpOp.LT, CmpOp.GE, CmpOp.EQ))
                               if kind is not Kind.BOOL else CmpOp.EQ,
                               FieldRef(fi), Lit(kind, lits[kind]))
                mut = Mutation(((3, Lit(Kind.UTF8, rng.choice(TAG_POOL))),))
                matched = [(idx, it) for idx, it in sorted(model.items())
                           if reference.ref_eval(TRIG_FIELDS, it, pred)]
                post = [(idx, reference.ref_mutation(TRIG_FIELDS, it, mut))
                        for idx, it in matched]
                seq = f.set(pred, mut, Async())
                rec = f.wait_completion(seq)
                assert rec.ok
                predict_fires(expected, regs, ev_set, post, rec.seq, staging)
                for idx, it in post:
                    model[idx] = staging.get(idx, it)
            else:
                victims = rng.sample(sorted(model), min(rng.randrange(1, 3),
                                                        len(model)))
                affected = [(idx, model[idx]) for idx in victims]
                seq = f.delete(victims, Async())
                rec = f.wait_completion(seq)
                assert rec.ok
                predict_fires(expected, regs, ev_delete, affected,
                              rec.seq, staging)
                for idx in victims:
                    del model[idx]

        got = [(r.trigger_id, r.causing_seq, int(r.event), r.payload)
               for r in f.read_log()]
        assert got == expected
        assert device.nested_fire_attempts == 0
        assert enc_rows(TRIG_SCHEMA, f.read_all()) == \
            enc_rows(TRIG_SCHEMA, sorted(model.items()))
        f.close()


def test_trigger_log_matches_brute_force_prediction(tmp_path):
    check_trigger_log_prediction(tmp_path, "loopback")


# --- 7. fuzzed frames cannot corrupt the store -----------------------------

MUTATING_TYPES = {int(wire.MsgType.SET), int(wire.MsgType.APPEND),
                  int(wire.MsgType.DELETE), int(wire.MsgType.WRITE)}


def corrupt(rng, frame: bytes) -> tuple[bytes, bool]:
    """Break a frame; the flag says whether the full length still arrives.

    Short deliveries (truncation, an inflated length field) leave the
    server waiting for bytes we then never send, so the client abandons
    the connection instead of expecting a reply.
    """
    roll = rng.randrange(5)
    buf = bytearray(frame)
    if roll == 0:
        # flip anywhere except the length field, which would starve the read
        spots = [*range(0, 16), *range(20, len(buf))]
        buf[rng.choice(spots)] ^= 1 << rng.randrange(8)
        return bytes(buf), True
    if roll == 1:
        return bytes(buf[:rng.randrange(1, len(buf))]), False
    if roll == 2:
        buf[:4] = b"XXXX"
        return bytes(buf), True
    if roll == 3:
        buf[4] = 0x7F                   # unknown framing version
        return bytes(buf), True
    buf[16:20] = (2**31).to_bytes(4, "little")   # impossible length
    return bytes(buf), False


def drain_closed(sock):
    """Read until the server hangs up; it may send one addressed error."""
    for _ in range(3):
        try:
            wire.read_frame(sock)
        except (NdpError, OSError):
            return
    raise AssertionError("connection survived a corrupt frame")


def test_fuzzed_frames_cannot_corrupt_the_store(tmp_path):
    rng = random.Random(0xC7)
    with stack(tmp_path / "vol", "loopback") as (conn, device, vol):
        f = open_dc(conn, "fz", create=True, schema=REPLAY_SCHEMA)
        f.append([(i, i, "fz") for i in range(30)])
        f.close()
        baseline = reference.state_hash(vol)

        pred_bytes = encode_ast(Compare(CmpOp.LT, FieldRef(0), Lit(Kind.U64, 10)))
        count_bytes = encode_ast(Count())

        def valid_request(r):
            if r < 0.4:
                return p.encode_request(p.PingReq())
            if r < 0.55:
                return p.encode_request(p.MetricsReq())
            if r < 0.7:
                return p.encode_request(
                    p.GetReq(p.TARGET_CONTAINER, 1, pred_bytes))
            if r < 0.85:
                return p.encode_request(p.ReadReq(p.SOURCE_RANGE, 1, 0, 5))
            return p.encode_request(p.ExecuteReq(count_bytes, (1,)))

        fuzz = loopback(device)
        sent = rid = mutating_successes = 0
        next_hash_check = 10_000
        try:
            while sent < 100_000:
                batch, expect = [], []
                for _ in range(min(120, 100_000 - sent)):
                    rid += 1
                    if rng.random() < 0.25:
                        mt = rng.randrange(0, 0x30)
                        payload = rng.randbytes(rng.randrange(0, 48))
                    else:
                        mt, payload = valid_request(rng.random())
                    fb = wire.encode_frame(mt, 0, rid, payload)
                    rt = wire.decode_frame(fb)
                    assert wire.encode_frame(rt.msg_type, rt.flags,
                                             rt.request_id, rt.payload) == fb
                    batch.append(fb)
                    expect.append((rid, mt))
                fuzz.sendall(b"".join(batch))
                for want_rid, mt in expect:
                    fr = wire.read_frame(fuzz)
                    assert fr.flags & wire.FLAG_RESPONSE
                    assert fr.request_id == want_rid
                    if mt in MUTATING_TYPES and not (fr.flags & wire.FLAG_ERROR):
                        mutating_successes += 1
                sent += len(expect)

                if sent < 100_000 and rng.random() < 0.12:
                    rid += 1
                    mt, payload = valid_request(rng.random())
                    bad, complete = corrupt(
                        rng, wire.encode_frame(mt, 0, rid, payload))
                    fuzz.sendall(bad)
                    sent += 1
                    if complete:
                        drain_closed(fuzz)
                    fuzz.close()
                    fuzz = loopback(device)
                if sent >= next_hash_check:
                    assert reference.state_hash(vol) == baseline
                    next_hash_check += 10_000
        finally:
            fuzz.close()

        assert sent == 100_000
        assert mutating_successes == 0
        assert reference.state_hash(vol) == baseline
        conn.call(p.PingReq())          # the shared device still serves


# --- 8. pushing the filter down wins by wire bytes -------------------------

def test_pushdown_traffic_advantage(tmp_path):
    t0 = time.perf_counter()
    with stack(tmp_path / "sparse", "loopback") as (conn, device, vol):
        rep = run_bench(conn, n=100_000, selectivity=0.01, item_bytes=32,
                        seed=11)
        assert rep.match_count == 1000
        assert rep.ratio >= 20.0, f"pushdown advantage collapsed: {rep.ratio:.2f}"
    with stack(tmp_path / "dense", "loopback") as (conn, device, vol):
        rep = run_bench(conn, n=100_000, selectivity=1.0, item_bytes=32,
                        seed=11)
        assert 0.8 <= rep.ratio <= 1.25, f"full-match parity broken: {rep.ratio:.2f}"
    assert time.perf_counter() - t0 < 30.0


# --- 9. everything above holds over a real socket --------------------------

def test_everything_holds_over_tcp(tmp_path):
    check_pushdown_matches_oracles(tmp_path / "c1", "tcp")
    check_modes_converge(tmp_path / "c2", "tcp")
    check_replay_exactly_once(tmp_path / "c3", "tcp")
    check_queue_admission(tmp_path / "c4", "tcp")
    check_frozen_view(tmp_path / "c5", "tcp")
    check_trigger_log_prediction(tmp_path / "c6", "tcp")
