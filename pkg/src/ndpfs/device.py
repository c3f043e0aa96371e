"""Device-side request engine: operations, execution modes, triggers, metrics.

A `Device` owns an open `store.Volume` and executes the operation set defined
in `protocol`.  Four ways to run a request:

  * direct: `call(req)` / `handle_request(mt, payload)` run it on the caller's
    thread and return (or raise) immediately.
  * synchronous: `submit_sync` enqueues and blocks until the completion
    arrives, either by literally re-checking at a poll interval (`Poll`) or by
    waiting for a push on the notification channel (`Interrupt`).  Both yield
    the identical `CompletionRecord`.
  * asynchronous: `submit_async` returns a strictly increasing ticket (the
    request seq) or raises ErrQueueFull, with no side effects, once
    `queue_depth` requests are accepted but incomplete.  Completions are
    fetched by ticket (`poll_completion`) or oldest-first (`next_completion`),
    each delivered exactly once.
  * delayed: `enqueue_delayed` appends the encoded request durably to the
    journal; `flush_delayed` (and replay during `Device` construction) applies
    pending requests in seq order.  The journal watermark advances inside the
    same catalog commit as each request's effects, so a crash anywhere leaves
    every request applied exactly once after reopen.

One logical worker drains the merged sync/async queue; `pause`, `step` and
`resume` expose the worker's scheduling for tests.  Every request is executed
under one lock, so requests never interleave.

Triggers run inside the causing request's commit: the predicate is evaluated
against each affected item image (the appended item, the post-image of a
replacement, the pre-image of a delete).  A mutation action rewrites the
affected item before commit and logs one record per rewritten index; a
program action computes one scalar over that event's matching images and
logs one record.  Rewrites caused by a trigger never fire further triggers.
An action whose evaluation fails is skipped for that item; the causing
request still succeeds.

Metrics count the data plane: each executed operation adds its request and
response payload sizes plus fixed frame overhead to `host_bytes_in/out`,
whatever mode carried it, so a pushed-down scan can be compared fairly
against a host-side one.  Mode-control wrappers (submit, poll, enqueue,
flush) are not counted here; a transport's own ledger sees those frames.
"""

from __future__ import annotations

import threading
import time

from . import exprs, protocol as p
from .errors import (
    BadRequest,
    EmptyInput,
    ErrQueueFull,
    NdpError,
    NoSuchContainer,
    NoSuchHandle,
    NoSuchToken,
    RequestNotDelayable,
    SchemaMismatch,
    SchemaRequired,
    StaleHandle,
    InvalidTriggerAction,
)
from .items import ItemSchema, Kind, decode_item, encode_item, validate_item
from .modes import Interrupt, Poll
from .store import Volume
from .wire import FRAME_OVERHEAD, MsgType

DEFAULT_QUEUE_DEPTH = 32
DEFAULT_POLL_INTERVAL = 0.001

_DELAYABLE = {MsgType.SET, MsgType.EXECUTE, MsgType.DELETE, MsgType.APPEND}
_MUTATING = {MsgType.SET, MsgType.DELETE, MsgType.APPEND, MsgType.WRITE}
_CONTROL = {MsgType.SUBMIT_ASYNC, MsgType.POLL_COMPLETION,
            MsgType.DELAYED_ENQUEUE, MsgType.DELAYED_FLUSH}


class _Handle:
    """Device-held result of a GET, or a materialized SortBy order."""

    __slots__ = ("handle_id", "kind", "container_id", "generation", "token_id",
                 "indices", "items", "schema")

    def __init__(self, handle_id, kind, container_id, generation, schema,
                 token_id=None, indices=None, items=None):
        self.handle_id = handle_id
        self.kind = kind                      # protocol.HANDLE_* value
        self.container_id = container_id
        self.generation = generation
        self.schema = schema
        self.token_id = token_id
        self.indices = indices                # index-set handles
        self.items = items                    # materialized handles

    @property
    def cardinality(self) -> int:
        return len(self.indices if self.indices is not None else self.items)

    def info(self) -> p.HandleInfo:
        return p.HandleInfo(self.handle_id, self.kind, self.cardinality,
                            self.container_id, self.generation)


class _Entry:
    """One queued request plus its delivery bookkeeping."""

    __slots__ = ("seq", "msg_type", "req", "payload_len", "kind", "notify",
                 "sink", "record", "event")

    def __init__(self, seq, msg_type, req, payload_len, kind, notify,
                 sink=None):
        self.seq = seq
        self.msg_type = msg_type
        self.req = req
        self.payload_len = payload_len
        self.kind = kind                      # "sync" or "async"
        self.notify = notify
        self.sink = sink                      # route notify here, not broadcast
        self.record: p.CompletionRecord | None = None
        self.event = threading.Event() if kind == "sync" else None


class Device:
    def __init__(self, volume: Volume, *, queue_depth: int = DEFAULT_QUEUE_DEPTH,
                 poll_interval: float = DEFAULT_POLL_INTERVAL,
                 replay: bool = True):
        self.volume = volume
        self.queue_depth = queue_depth
        self.poll_interval = poll_interval
        self._exec_lock = threading.RLock()
        self._work_cv = threading.Condition()
        self._queue: list[_Entry] = []
        self._inflight_async = 0
        self._paused = False
        self._allowance = 0
        self._stopping = False
        self._completions: dict[int, p.CompletionRecord] = {}
        self._completion_order: list[int] = []
        self._completion_cv = threading.Condition()
        self._handles: dict[int, _Handle] = {}
        self._next_handle = 1
        self._listeners: list = []
        self._metrics_lock = threading.Lock()
        self._host_bytes_in = 0
        self._host_bytes_out = 0
        self._items_scanned = 0
        self._requests_completed = 0
        self.nested_fire_attempts = 0
        self._in_trigger = False
        if replay:
            self.flush_delayed()
        self._worker = threading.Thread(target=self._exec_loop,
                                        name="ndpfs-executor", daemon=True)
        self._worker.start()

    # -- lifecycle --

    def close(self) -> None:
        with self._work_cv:
            self._stopping = True
            self._work_cv.notify_all()
        self._worker.join(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- executor scheduling (test seams) --

    def pause(self) -> None:
        with self._work_cv:
            self._paused = True
            self._allowance = 0

    def step(self, n: int = 1) -> None:
        """Let the paused worker run `n` queued requests, then hold again."""
        with self._work_cv:
            self._allowance += n
            self._work_cv.notify_all()

    def resume(self) -> None:
        with self._work_cv:
            self._paused = False
            self._allowance = 0
            self._work_cv.notify_all()

    def _exec_loop(self) -> None:
        while True:
            with self._work_cv:
                while True:
                    if self._stopping:
                        return
                    if self._queue and (not self._paused or self._allowance > 0):
                        entry = self._queue.pop(0)
                        if self._paused:
                            self._allowance -= 1
                        break
                    self._work_cv.wait()
            self._run_entry(entry)

    # -- notification channel --

    def add_listener(self, fn) -> None:
        """fn(kind, payload): kind "completion" with a CompletionRecord, or
        "trigger" with an encoded log record body."""
        self._listeners.append(fn)

    def remove_listener(self, fn) -> None:
        try:
            self._listeners.remove(fn)
        except ValueError:
            pass

    def _notify(self, kind: str, payload) -> None:
        for fn in list(self._listeners):
            try:
                fn(kind, payload)
            except Exception:
                pass

    # -- metrics --

    def _account(self, req_len: int, resp_len: int, scanned: int) -> None:
        with self._metrics_lock:
            self._host_bytes_in += FRAME_OVERHEAD + req_len
            self._host_bytes_out += FRAME_OVERHEAD + resp_len
            self._items_scanned += scanned
            self._requests_completed += 1

    def metrics(self) -> p.MetricsResp:
        with self._metrics_lock:
            return p.MetricsResp(self._host_bytes_in, self._host_bytes_out,
                                 self._items_scanned, self._requests_completed)

    # -- direct execution --

    def call(self, req, *, notify_sink=None):
        """Run one request on the calling thread; returns the response
        object or raises the operation's error.  `notify_sink` routes this
        request's interrupt notification to one transport connection."""
        if isinstance(req, p.SubmitAsyncReq):
            return p.SubmitAsyncResp(
                self.submit_async_raw(req.op_msg_type, req.op_payload,
                                      notify=req.notify, sink=notify_sink))
        if isinstance(req, p.PollCompletionReq):
            if req.mode == p.POLL_BY_SEQ:
                return self.poll_completion(req.seq)
            return self.next_completion(wait=req.mode == p.POLL_NEXT_WAIT)
        if isinstance(req, p.DelayedEnqueueReq):
            return p.DelayedEnqueueResp(
                self.enqueue_delayed_raw(req.op_msg_type, req.op_payload))
        if isinstance(req, p.DelayedFlushReq):
            return tuple(self.flush_delayed())
        mt, payload = p.encode_request(req)
        return self._direct(mt, req, len(payload))

    def handle_request(self, msg_type: int, payload: bytes, *,
                       notify_sink=None) -> bytes:
        """Transport entry point: raw request payload in, raw response
        payload out; raises NdpError for error frames."""
        req = p.decode_request(msg_type, payload)
        resp = self.call(req, notify_sink=notify_sink)
        return p.encode_response(msg_type, resp)

    def _direct(self, msg_type: int, req, payload_len: int):
        seq = self.volume.next_seq() if msg_type in _MUTATING else 0
        try:
            with self._exec_lock:
                resp, scanned, matched = self._execute(msg_type, req, seq)
        except NdpError as exc:
            err_len = len(p.encode_error(exc.code, str(exc)))
            if msg_type not in _CONTROL:
                self._account(payload_len, err_len, 0)
            raise
        if msg_type not in _CONTROL:
            resp_len = len(p.encode_response(msg_type, resp))
            self._account(payload_len, resp_len, scanned)
        return resp

    # -- synchronous mode --

    def submit_sync(self, req, completion: Poll | Interrupt = Poll()
                    ) -> p.CompletionRecord:
        mt, payload = p.encode_request(req)
        if mt in _CONTROL:
            raise BadRequest(f"{MsgType(mt).name} cannot be queued")
        entry = _Entry(self.volume.next_seq(), mt, req, len(payload), "sync",
                       isinstance(completion, Interrupt))
        with self._work_cv:
            self._queue.append(entry)
            self._work_cv.notify_all()
        if isinstance(completion, Interrupt):
            entry.event.wait()
            return entry.record
        interval = completion.interval
        if interval is None:
            interval = self.poll_interval
        while entry.record is None:
            time.sleep(interval)
        return entry.record

    # -- asynchronous mode --

    def submit_async(self, req, *, notify: int = p.NOTIFY_NONE) -> int:
        mt, payload = p.encode_request(req)
        return self.submit_async_raw(mt, payload, notify=notify, req=req)

    def submit_async_raw(self, msg_type: int, payload: bytes, *,
                         notify: int = p.NOTIFY_NONE, req=None,
                         sink=None) -> int:
        if msg_type in _CONTROL:
            raise BadRequest(f"{MsgType(msg_type).name} cannot be queued")
        if req is None:
            req = p.decode_request(msg_type, payload)
        with self._work_cv:
            if self._inflight_async >= self.queue_depth:
                raise ErrQueueFull(
                    f"{self._inflight_async} requests in flight",
                    depth=self.queue_depth)
            self._inflight_async += 1
            entry = _Entry(self.volume.next_seq(), msg_type, req,
                           len(payload), "async",
                           notify == p.NOTIFY_INTERRUPT, sink=sink)
            self._queue.append(entry)
            self._work_cv.notify_all()
        return entry.seq

    def poll_completion(self, seq: int) -> p.CompletionRecord | None:
        with self._completion_cv:
            rec = self._completions.pop(seq, None)
            if rec is not None:
                self._completion_order.remove(seq)
            return rec

    def next_completion(self, wait: bool = True,
                        timeout: float | None = None) -> p.CompletionRecord | None:
        with self._completion_cv:
            if wait:
                ok = self._completion_cv.wait_for(
                    lambda: self._completion_order, timeout)
                if not ok:
                    return None
            if not self._completion_order:
                return None
            seq = self._completion_order.pop(0)
            return self._completions.pop(seq)

    # -- delayed mode --

    def enqueue_delayed(self, req) -> int:
        mt, payload = p.encode_request(req)
        return self.enqueue_delayed_raw(mt, payload, req=req)

    def enqueue_delayed_raw(self, msg_type: int, payload: bytes,
                            req=None) -> int:
        if msg_type not in _DELAYABLE:
            try:
                name = MsgType(msg_type).name
            except ValueError:
                name = f"0x{msg_type:02x}"
            raise RequestNotDelayable(f"{name} cannot be delayed")
        if req is None:
            p.decode_request(msg_type, payload)   # malformed fails at enqueue
        seq = self.volume.next_seq()
        self.volume.journal_append(seq, p.pack_op(msg_type, payload))
        return seq

    def flush_delayed(self) -> list[p.CompletionRecord]:
        """Apply journal entries past the watermark, oldest first; each
        request's effects and the watermark move in one commit."""
        out = []
        with self._exec_lock:
            for seq, blob in self.volume.journal_pending():
                self.volume._fire("replay.pre_apply", seq=seq)
                mt, payload = p.unpack_op(blob)
                rec = self._run_one(seq, mt, raw=payload, watermark=seq)
                if self.volume.watermark < seq:
                    self.volume._commit_watermark(seq)
                out.append(rec)
        return out

    # -- shared execution path --

    def _run_entry(self, entry: _Entry) -> None:
        with self._exec_lock:
            rec = self._run_one(entry.seq, entry.msg_type, req=entry.req,
                                payload_len=entry.payload_len)
        entry.record = rec
        if entry.kind == "sync":
            if entry.notify:
                self._notify("completion", rec)
            entry.event.set()
        else:
            with self._work_cv:
                self._inflight_async -= 1
            with self._completion_cv:
                self._completions[rec.seq] = rec
                self._completion_order.append(rec.seq)
                self._completion_cv.notify_all()
            if entry.notify:
                (entry.sink or self._notify)("completion", rec)

    def _run_one(self, seq: int, msg_type: int, req=None, raw: bytes = None,
                 payload_len: int | None = None,
                 watermark: int | None = None) -> p.CompletionRecord:
        if payload_len is None:
            payload_len = len(raw)
        try:
            if req is None:
                req = p.decode_request(msg_type, raw)
            resp, scanned, matched = self._execute(msg_type, req, seq,
                                                   watermark=watermark)
            result = p.encode_response(msg_type, resp)
            status = 0
            resp_len = len(result)
        except NdpError as exc:
            status = exc.code
            result = str(exc).encode("utf-8")
            scanned = matched = 0
            resp_len = len(p.encode_error(status, str(exc)))
        host = 2 * FRAME_OVERHEAD + payload_len + resp_len
        self._account(payload_len, resp_len, scanned)
        return p.CompletionRecord(seq, msg_type, status, scanned, matched,
                                  host, result)

    # -- operation dispatch --

    def _execute(self, msg_type: int, req, seq: int,
                 watermark: int | None = None):
        """Returns (response object, items scanned, items matched)."""
        mt = MsgType(msg_type)
        if mt is MsgType.PING:
            return None, 0, 0
        if mt is MsgType.OPEN:
            return self._exec_open(req)
        if mt is MsgType.CLOSE:
            self.volume.schema_of(req.container_id)
            return None, 0, 0
        if mt is MsgType.FREEZE:
            tok = self.volume.freeze(req.container_id, req.lo, req.hi)
            return p.FreezeResp(tok.token_id, tok.lo, tok.hi,
                                tok.generation_at_freeze), 0, 0
        if mt is MsgType.UNFREEZE:
            self.volume.unfreeze(self.volume.token(req.token_id))
            return None, 0, 0
        if mt is MsgType.GET:
            return self._exec_get(req)
        if mt is MsgType.READ:
            return self._exec_read(req)
        if mt is MsgType.WRITE:
            return self._exec_write(req, seq, watermark)
        if mt is MsgType.SET:
            return self._exec_set(req, seq, watermark)
        if mt is MsgType.EXECUTE:
            return self._exec_execute(req)
        if mt is MsgType.TRIGGER_REGISTER:
            return self._exec_trigger_register(req)
        if mt is MsgType.TRIGGER_UNREGISTER:
            self.volume.remove_trigger(req.trigger_id)
            return None, 0, 0
        if mt is MsgType.METRICS:
            return self.metrics(), 0, 0
        if mt is MsgType.APPEND:
            return self._exec_append(req, seq, watermark)
        if mt is MsgType.CREATE_CONTAINER:
            cid = self.volume.create_container(req.name, req.schema)
            return p.CreateContainerResp(cid), 0, 0
        if mt is MsgType.DELETE:
            return self._exec_delete(req, seq, watermark)
        raise BadRequest(f"{mt.name} is not an executable operation")

    def _exec_open(self, req: p.OpenReq):
        try:
            cid = self.volume.container_id(req.name)
        except NoSuchContainer:
            if not req.create:
                raise
            if req.schema is None:
                raise SchemaRequired(
                    f"creating {req.name!r} needs a schema") from None
            cid = self.volume.create_container(req.name, req.schema)
            return p.OpenResp(cid, req.schema), 0, 0
        schema = self.volume.schema_of(cid)
        if req.schema is not None and req.schema != schema:
            raise SchemaMismatch(f"container {req.name!r} already exists "
                                 f"with a different schema")
        return p.OpenResp(cid, schema), 0, 0

    def _decoded(self, blob: bytes):
        return exprs.decode_ast(blob)

    def _exec_get(self, req: p.GetReq):
        pred = self._decoded(req.predicate)
        if req.target_kind == p.TARGET_TOKEN:
            tok = self.volume.token(req.target_id)
            cid = tok.container_id
            pairs = self.volume.token_items(req.target_id)
            generation = tok.generation_at_freeze
            token_id = tok.token_id
        else:
            cid = req.target_id
            pairs = self.volume.live_items(cid)
            generation = self.volume.generation_of(cid)
            token_id = None
        schema = self.volume.schema_of(cid)
        exprs.typecheck_predicate(schema, pred)
        indices = [idx for idx, item in pairs
                   if exprs.eval_predicate(schema, item, pred)]
        handle = self._new_handle(p.HANDLE_INDEX_SET, cid, generation, schema,
                                  token_id=token_id, indices=indices)
        return handle.info(), len(pairs), len(indices)

    def _new_handle(self, kind, cid, generation, schema, token_id=None,
                    indices=None, items=None) -> _Handle:
        handle = _Handle(self._next_handle, kind, cid, generation, schema,
                         token_id=token_id, indices=indices, items=items)
        self._next_handle += 1
        self._handles[handle.handle_id] = handle
        return handle

    def _live_handle(self, handle_id: int) -> _Handle:
        handle = self._handles.get(handle_id)
        if handle is None:
            raise NoSuchHandle(f"no handle {handle_id}")
        if handle.kind == p.HANDLE_INDEX_SET:
            if handle.token_id is not None:
                try:
                    self.volume.token(handle.token_id)
                except NoSuchToken:
                    raise StaleHandle(f"handle {handle_id} outlived its "
                                      f"freeze token") from None
            elif (self.volume.generation_of(handle.container_id)
                  != handle.generation):
                raise StaleHandle(
                    f"container {handle.container_id} changed since the "
                    f"handle was built", handle=handle_id)
        return handle

    def _handle_pairs(self, handle: _Handle) -> list[tuple[int, tuple]]:
        if handle.kind == p.HANDLE_MATERIALIZED:
            return handle.items
        if handle.token_id is not None:
            snapshot = dict(self.volume.token_items(handle.token_id))
            return [(i, snapshot[i]) for i in handle.indices]
        return [(i, self.volume.get_item(handle.container_id, i))
                for i in handle.indices]

    def _exec_read(self, req: p.ReadReq):
        if req.source_kind == p.SOURCE_HANDLE:
            handle = self._live_handle(req.source_id)
            pairs = self._handle_pairs(handle)
            window = pairs[req.offset:req.offset + req.count]
            entries = tuple((idx, encode_item(handle.schema, item))
                            for idx, item in window)
            return p.ReadResp(entries), len(window), len(window)
        if req.source_kind == p.SOURCE_RANGE:
            cid = req.source_id
            schema = self.volume.schema_of(cid)
            count = self.volume.meta(cid)["item_count"]
            lo = min(req.offset, count)
            hi = min(req.offset + req.count, count)
            window = [(i, it) for i, it in self.volume.read_items(cid, lo, hi)]
            entries = tuple((idx, encode_item(schema, item))
                            for idx, item in window)
            return p.ReadResp(entries), len(window), len(window)
        if req.source_kind == p.SOURCE_TRIGGER_LOG:
            records = self.volume.read_log()
            window = records[req.offset:req.offset + req.count]
            entries = tuple((req.offset + i, body)
                            for i, body in enumerate(window))
            return p.ReadResp(entries), 0, 0
        regs = sorted(self.volume.triggers.values(),
                      key=lambda t: t.trigger_id)
        if req.source_id:
            regs = [t for t in regs if t.container_id == req.source_id]
        entries = tuple(
            (t.trigger_id,
             p.encode_registration(t.trigger_id, t.container_id, t.event,
                                   t.enabled, t.pred, t.action))
            for t in regs)
        return p.ReadResp(entries), 0, 0

    def _exec_write(self, req: p.WriteReq, seq: int, watermark: int | None):
        handle = self._live_handle(req.handle_id)
        pairs = self._handle_pairs(handle)
        cid = self.volume.create_container(req.dest_name, handle.schema)
        if pairs:
            batch = self.volume.batch(cid)
            batch.append([item for _, item in pairs])
            batch.commit(watermark=watermark)
        elif watermark is not None:
            self.volume._commit_watermark(watermark)
        return p.WriteResp(cid), len(pairs), len(pairs)

    def _exec_set(self, req: p.SetReq, seq: int, watermark: int | None):
        cid = req.container_id
        schema = self.volume.schema_of(cid)
        pred = self._decoded(req.predicate)
        mut = self._decoded(req.mutation)
        exprs.typecheck_predicate(schema, pred)
        if not isinstance(mut, exprs.Mutation):
            raise BadRequest("set needs a mutation tree")
        exprs.typecheck_mutation(schema, mut)
        pairs = self.volume.live_items(cid)
        matched = [(idx, item) for idx, item in pairs
                   if exprs.eval_predicate(schema, item, pred)]
        batch = self.volume.batch(cid)
        for idx, _ in matched:
            batch._check_mutable(idx)
        staged = [(idx, exprs.eval_mutation(schema, item, mut))
                  for idx, item in matched]
        for idx, new_item in staged:
            batch.set(idx, new_item)
        scanned = len(pairs)
        scanned += self._fire_triggers(batch, cid, schema, p.TriggerEvent.SET,
                                       [(idx, batch.sets[idx])
                                        for idx, _ in staged], seq)
        generation = batch.commit(watermark=watermark)
        return p.SetResp(len(matched), generation), scanned, len(matched)

    def _exec_append(self, req: p.AppendReq, seq: int, watermark: int | None):
        cid = req.container_id
        schema = self.volume.schema_of(cid)
        items = [decode_item(schema, blob) for blob in req.items]
        batch = self.volume.batch(cid)
        first = batch.append(items)
        affected = [(first + k, item) for k, item in enumerate(batch.appends)]
        scanned = self._fire_triggers(batch, cid, schema,
                                      p.TriggerEvent.APPEND, affected, seq,
                                      append_base=first)
        generation = batch.commit(watermark=watermark)
        return p.AppendResp(first, generation), scanned, len(items)

    def _exec_delete(self, req: p.DeleteReq, seq: int, watermark: int | None):
        cid = req.container_id
        schema = self.volume.schema_of(cid)
        batch = self.volume.batch(cid)
        pre_images = []
        seen = set()
        for idx in req.indices:
            if idx not in seen:
                seen.add(idx)
                batch._check_mutable(idx)
                pre_images.append((idx, self.volume.get_item(cid, idx)))
        count = batch.delete(req.indices)
        scanned = self._fire_triggers(batch, cid, schema,
                                      p.TriggerEvent.DELETE, pre_images, seq)
        generation = batch.commit(watermark=watermark)
        return p.DeleteResp(count, generation), scanned, count

    def _exec_execute(self, req: p.ExecuteReq):
        if not req.targets:
            raise BadRequest("execute needs at least one target container")
        prog = self._decoded(req.program)
        schema = self.volume.schema_of(req.targets[0])
        for cid in req.targets[1:]:
            if self.volume.schema_of(cid) != schema:
                raise SchemaMismatch(
                    f"container {cid} has a different schema",
                    first=req.targets[0])
        exprs.typecheck_program(schema, prog)
        pairs: list[tuple[int, tuple]] = []
        for cid in req.targets:
            pairs.extend(self.volume.live_items(cid))
        scanned = len(pairs)
        result = self._run_program(schema, prog, pairs, req.targets[0])
        return result, scanned, scanned

    def _run_program(self, schema: ItemSchema, prog, pairs, source_cid: int):
        if isinstance(prog, exprs.Count):
            return p.ScalarResult(Kind.U64, len(pairs))
        if isinstance(prog, exprs.SortBy):
            kind = schema.kind_of(prog.field)
            key = exprs.sort_key(kind)
            ordered = sorted(pairs, key=lambda pr: key(pr[1][prog.field]),
                             reverse=prog.descending)
            handle = self._new_handle(p.HANDLE_MATERIALIZED, source_cid,
                                      self.volume.generation_of(source_cid),
                                      schema, items=ordered)
            return handle.info()
        kind = schema.kind_of(prog.field)
        values = [item[prog.field] for _, item in pairs]
        if isinstance(prog, exprs.Sum):
            total = 0.0 if kind is Kind.F64 else 0
            for v in values:
                total = exprs.checked_arith(exprs.ArithOp.ADD, kind, total, v)
            return p.ScalarResult(kind, total)
        if not values:
            raise EmptyInput("no live items to aggregate")
        key = exprs.sort_key(kind)
        if isinstance(prog, exprs.Min):
            return p.ScalarResult(kind, min(values, key=key))
        return p.ScalarResult(kind, max(values, key=key))

    # -- triggers --

    def _exec_trigger_register(self, req: p.TriggerRegisterReq):
        schema = self.volume.schema_of(req.container_id)
        pred = self._decoded(req.predicate)
        exprs.typecheck_predicate(schema, pred)
        action = self._decoded(req.action)
        if isinstance(action, exprs.Mutation):
            exprs.typecheck_mutation(schema, action)
            if req.event == p.TriggerEvent.DELETE:
                raise InvalidTriggerAction(
                    "a mutation action cannot rewrite a deleted item")
        elif isinstance(action, (exprs.Count, exprs.Sum, exprs.Min, exprs.Max)):
            exprs.typecheck_program(schema, action)
        elif isinstance(action, exprs.SortBy):
            raise InvalidTriggerAction("trigger actions must rewrite the item "
                                       "or produce a scalar")
        else:
            raise InvalidTriggerAction("action must be a mutation or a "
                                       "scalar program")
        tid = self.volume.add_trigger(req.container_id, int(req.event),
                                      req.predicate, req.action,
                                      enabled=req.enabled)
        return p.TriggerRegisterResp(tid), 0, 0

    def _fire_triggers(self, batch, cid: int, schema: ItemSchema, event,
                       affected: list[tuple[int, tuple]], seq: int,
                       append_base: int | None = None) -> int:
        """Evaluate registrations against the affected images, staging
        rewrites and log records into `batch`.  Returns items scanned."""
        if self._in_trigger:
            self.nested_fire_attempts += 1
            return 0
        regs = [t for t in sorted(self.volume.triggers.values(),
                                  key=lambda t: t.trigger_id)
                if t.container_id == cid and t.event == int(event)
                and t.enabled]
        if not regs or not affected:
            return 0
        scanned = 0
        self._in_trigger = True
        try:
            for reg in regs:
                pred = self._decoded(reg.pred)
                action = self._decoded(reg.action)
                matched = []
                for idx, item in affected:
                    scanned += 1
                    if exprs.eval_predicate(schema, item, pred):
                        matched.append((idx, item))
                if not matched:
                    continue
                if isinstance(action, exprs.Mutation):
                    for idx, item in matched:
                        try:
                            new_item = exprs.eval_mutation(schema, item, action)
                            validate_item(schema, new_item)
                        except NdpError:
                            continue            # failed action: item kept as-is
                        if append_base is not None and idx >= append_base:
                            batch.appends[idx - append_base] = tuple(new_item)
                        else:
                            batch.sets[idx] = tuple(new_item)
                        self._log_fire(batch, reg.trigger_id, seq, event,
                                       p.U64.pack(idx))
                else:
                    try:
                        scalar = self._run_program(schema, action, matched, cid)
                    except NdpError:
                        continue
                    self._log_fire(batch, reg.trigger_id, seq, event,
                                   p.encode_scalar(scalar.kind, scalar.value))
        finally:
            self._in_trigger = False
        return scanned

    def _log_fire(self, batch, trigger_id: int, seq: int, event,
                  payload: bytes) -> None:
        body = p.encode_trigger_record(trigger_id, seq, int(event), payload)
        batch.log(body)
        self._notify("trigger", body)
