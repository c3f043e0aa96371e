"""Host-side file mediator over a device connection.

`DcFile` binds one container on a served device and exposes two interfaces:

  * the data-centric one: filters, mutations and programs are shipped to the
    device (``get``/``set``/``execute``), and only results cross back.  The
    mode argument picks how the request runs: ``None`` is a plain blocking
    call, ``Sync(Poll()|Interrupt())`` blocks on a queued completion,
    ``Async()`` returns a ticket, ``Delayed()`` journals the request for a
    later flush.
  * the conventional one: ``read_all`` transfers every live item to the host
    and ``filter_on_host`` evaluates the predicate here, paying the full
    transfer cost.  This is the comparison arm for traffic measurements.

The mediator holds no item cache; every byte that crosses the boundary is
visible in the connection's traffic ledger.  A `DcFile` is safe to share
between threads.
"""

from __future__ import annotations

import os
import time

from . import exprs, protocol as p
from .client import Connection
from .errors import HandleClosed, ReadOnlyFile, RequestNotDelayable, SchemaRequired
from .items import ItemSchema, decode_item, encode_item
from .modes import Async, Delayed, Interrupt, Poll, Sync

DEFAULT_POLL_INTERVAL = 0.001
DEFAULT_TIMEOUT = 30.0

ADDR_ENV_VAR = "NDPFS_DEVICE_ADDR"


def resolve_device_addr(flag_value: str | None = None,
                        default: str | None = None) -> str | None:
    """Pick the device address: environment beats the flag beats the default."""
    return os.environ.get(ADDR_ENV_VAR) or flag_value or default


def _ast_bytes(node_or_bytes) -> bytes:
    if isinstance(node_or_bytes, (bytes, bytearray)):
        return bytes(node_or_bytes)
    return exprs.encode_ast(node_or_bytes)


def _ast_node(node_or_bytes):
    if isinstance(node_or_bytes, (bytes, bytearray)):
        return exprs.decode_ast(bytes(node_or_bytes))
    return node_or_bytes


def open_dc(conn: Connection, name: str, *, create: bool = False,
            read_only: bool = False, schema: ItemSchema | None = None,
            poll_interval: float = DEFAULT_POLL_INTERVAL,
            timeout: float = DEFAULT_TIMEOUT) -> "DcFile":
    """Bind `name` on the served device, creating it when asked.

    Creation needs a schema; opening an existing container does not, but a
    schema passed here is still checked against the stored one.
    """
    if create and schema is None:
        raise SchemaRequired("creating a container requires a schema",
                             container=name)
    resp = conn.call(p.OpenReq(name, create, read_only, schema),
                     timeout=timeout)
    return DcFile(conn, resp.container_id, name, resp.schema,
                  read_only=read_only, poll_interval=poll_interval,
                  timeout=timeout)


class DcFile:
    """One open container; see the module docstring for the two interfaces."""

    def __init__(self, conn: Connection, container_id: int, name: str,
                 schema: ItemSchema, *, read_only: bool = False,
                 poll_interval: float = DEFAULT_POLL_INTERVAL,
                 timeout: float = DEFAULT_TIMEOUT):
        self.conn = conn
        self.container_id = container_id
        self.name = name
        self.schema = schema
        self.read_only = read_only
        self.poll_interval = poll_interval
        self.timeout = timeout
        self._closed = False

    # -- lifecycle ----------------------------------------------------------

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        if self.conn.alive:
            self.conn.call(p.CloseReq(self.container_id), timeout=self.timeout)

    def __enter__(self) -> "DcFile":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _check_open(self) -> None:
        if self._closed:
            raise HandleClosed("file is closed", container=self.name)

    def _writable(self) -> None:
        self._check_open()
        if self.read_only:
            raise ReadOnlyFile("file opened read-only", container=self.name)

    # -- mode plumbing ------------------------------------------------------

    def _call(self, req):
        self._check_open()
        return self.conn.call(req, timeout=self.timeout)

    def _run(self, req, mode):
        """Run `req` per `mode`; sync modes return the decoded response,
        async and delayed return the ticket seq."""
        if mode is None:
            return self._call(req)
        self._check_open()
        mt, payload = p.encode_request(req)
        if isinstance(mode, Delayed):
            resp = self._call(p.DelayedEnqueueReq(mt, payload))
            return resp.seq
        if isinstance(mode, Async):
            resp = self._call(p.SubmitAsyncReq(p.NOTIFY_NONE, mt, payload))
            return resp.seq
        if not isinstance(mode, Sync):
            raise TypeError(f"not an execution mode: {mode!r}")
        if isinstance(mode.completion, Interrupt):
            seq = self._call(
                p.SubmitAsyncReq(p.NOTIFY_INTERRUPT, mt, payload)).seq
            rec = self.conn.wait_completion_notify(seq, timeout=self.timeout)
            if rec is None:
                raise TimeoutError(f"no completion pushed for seq {seq}")
        else:
            seq = self._call(p.SubmitAsyncReq(p.NOTIFY_NONE, mt, payload)).seq
            rec = self.wait_completion(seq, interval=mode.completion.interval)
        return rec.response()

    def poll_completion(self, seq: int) -> p.CompletionRecord | None:
        """Fetch the completion for `seq` if it is ready; at most one caller
        ever receives it."""
        return self._call(p.PollCompletionReq(p.POLL_BY_SEQ, seq))

    def wait_completion(self, seq: int, interval: float | None = None,
                        timeout: float | None = None) -> p.CompletionRecord:
        interval = self.poll_interval if interval is None else interval
        deadline = time.monotonic() + (self.timeout if timeout is None
                                       else timeout)
        while True:
            rec = self.poll_completion(seq)
            if rec is not None:
                return rec
            if time.monotonic() >= deadline:
                raise TimeoutError(f"no completion for seq {seq}")
            time.sleep(interval)

    def flush_delayed(self) -> tuple[p.CompletionRecord, ...]:
        """Execute every journalled request now, in order."""
        return self._call(p.DelayedFlushReq())

    # -- data-centric verbs -------------------------------------------------

    def freeze(self, lo: int | None = None, hi: int | None = None):
        """Pin an immutable view of [lo, hi); the whole file by default."""
        return self._call(p.FreezeReq(self.container_id, lo, hi))

    def unfreeze(self, token) -> None:
        self._call(p.UnfreezeReq(_token_id(token)))

    def get(self, predicate, mode=None, *, token=None):
        """Device-side filter; returns a result handle (items stay on the
        device until read)."""
        if isinstance(mode, Delayed):
            raise RequestNotDelayable(
                "a filter result needs a waiting consumer",
                container=self.name)
        if token is None:
            req = p.GetReq(p.TARGET_CONTAINER, self.container_id,
                           _ast_bytes(predicate))
        else:
            req = p.GetReq(p.TARGET_TOKEN, _token_id(token),
                           _ast_bytes(predicate))
        return self._run(req, mode)

    def read(self, handle, offset: int = 0, count: int | None = None):
        """Transfer a window of a result handle; returns (index, item)
        pairs."""
        hid = handle.handle_id if isinstance(handle, p.HandleInfo) else handle
        req = p.ReadReq(p.SOURCE_HANDLE, hid, offset,
                        0xFFFFFFFF if count is None else count)
        resp = self._call(req)
        return [(idx, decode_item(self.schema, blob))
                for idx, blob in resp.entries]

    def write(self, handle, dest_name: str) -> int:
        """Persist a result handle into a new container device-side; item
        bytes never visit the host."""
        hid = handle.handle_id if isinstance(handle, p.HandleInfo) else handle
        return self._call(p.WriteReq(hid, dest_name)).container_id

    def set(self, predicate, mutation, mode=None):
        self._writable()
        req = p.SetReq(self.container_id, _ast_bytes(predicate),
                       _ast_bytes(mutation))
        return self._run(req, mode)

    def execute(self, program, mode=None, others=()):
        """Run a program over this container (plus `others`, in order)."""
        targets = (self.container_id,
                   *(o.container_id if isinstance(o, DcFile) else o
                     for o in others))
        return self._run(p.ExecuteReq(_ast_bytes(program), targets), mode)

    def append(self, items, mode=None):
        self._writable()
        blobs = tuple(encode_item(self.schema, item) for item in items)
        return self._run(p.AppendReq(self.container_id, blobs), mode)

    def delete(self, indices, mode=None):
        self._writable()
        return self._run(p.DeleteReq(self.container_id, tuple(indices)), mode)

    # -- conventional byte-moving path --------------------------------------

    def read_all(self):
        """Transfer every live item to the host; returns (index, item)
        pairs."""
        req = p.ReadReq(p.SOURCE_RANGE, self.container_id, 0, 0xFFFFFFFF)
        resp = self._call(req)
        return [(idx, decode_item(self.schema, blob))
                for idx, blob in resp.entries]

    def filter_on_host(self, predicate):
        """Reference path: ship everything over, evaluate the predicate
        here."""
        node = _ast_node(predicate)
        exprs.typecheck_predicate(self.schema, node)
        return [(idx, item) for idx, item in self.read_all()
                if exprs.eval_predicate(self.schema, item, node)]

    # -- triggers -----------------------------------------------------------

    def add_trigger(self, event, predicate, action, enabled: bool = True) -> int:
        resp = self._call(p.TriggerRegisterReq(
            self.container_id, event, _ast_bytes(predicate),
            _ast_bytes(action), enabled))
        return resp.trigger_id

    def remove_trigger(self, trigger_id: int) -> None:
        self._call(p.TriggerUnregisterReq(trigger_id))

    def triggers(self):
        """Registrations for this container, as (trigger_id, registration)."""
        resp = self._call(p.ReadReq(p.SOURCE_TRIGGER_REGS, self.container_id))
        return [(tid, p.decode_registration(blob)) for tid, blob in resp.entries]

    def read_log(self):
        """Decode the device's whole trigger firing log, oldest first."""
        resp = self._call(p.ReadReq(p.SOURCE_TRIGGER_LOG, 0))
        return [p.decode_trigger_record(blob) for _, blob in resp.entries]

    # -- device-wide --------------------------------------------------------

    def metrics(self) -> p.MetricsResp:
        return self._call(p.MetricsReq())


def _token_id(token) -> int:
    return token.token_id if isinstance(token, p.FreezeResp) else token
