"""Request, response and completion payload codecs for the framed protocol.

Every operation's request payload and response payload is defined here as a
frozen dataclass plus a byte codec, so the same request bytes can travel over
a socket, sit in the journal awaiting delayed execution, or be handed to the
device in process.  All integers are little-endian.  Variable-length fields
use `u16 len + utf8` for names and `u32 len + bytes` for blobs.

Expression trees travel pre-encoded (see `exprs.encode_ast`); items travel as
encoded item blobs (see `items.encode_item`), each length-prefixed so payloads
can be split without knowing the container's schema.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

from .errors import BadRequest, DecodeError, TrailingBytes, Truncated, raise_for_code
from .items import ItemSchema, Kind, decode_schema_from, encode_schema
from .wire import MsgType

U8 = struct.Struct("<B")
U16 = struct.Struct("<H")
U32 = struct.Struct("<I")
U64 = struct.Struct("<Q")
I64 = struct.Struct("<q")
F64 = struct.Struct("<d")


class TriggerEvent(enum.IntEnum):
    """Mutation classes a trigger can watch; values are the on-disk tags."""

    APPEND = 1
    SET = 2
    DELETE = 3


class _Cur:
    """Bounds-checked read cursor over a payload."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise Truncated(f"payload needs {end} bytes, got {len(self.data)}")
        out = self.data[self.pos:end]
        self.pos = end
        return out

    def u8(self) -> int:
        return U8.unpack(self.take(1))[0]

    def u16(self) -> int:
        return U16.unpack(self.take(2))[0]

    def u32(self) -> int:
        return U32.unpack(self.take(4))[0]

    def u64(self) -> int:
        return U64.unpack(self.take(8))[0]

    def blob(self) -> bytes:
        return self.take(self.u32())

    def name(self) -> str:
        raw = self.take(self.u16())
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError(f"name is not valid UTF-8: {exc}") from None

    def schema(self) -> ItemSchema:
        schema, self.pos = decode_schema_from(self.data, self.pos)
        return schema

    def finish(self) -> None:
        if self.pos != len(self.data):
            raise TrailingBytes(
                f"{len(self.data) - self.pos} unconsumed payload bytes")


def _blob(b: bytes) -> bytes:
    return U32.pack(len(b)) + b


def _name(s: str) -> bytes:
    raw = s.encode("utf-8")
    return U16.pack(len(raw)) + raw


# ---------------------------------------------------------------------------
# Requests


@dataclass(frozen=True)
class PingReq:
    pass


@dataclass(frozen=True)
class OpenReq:
    name: str
    create: bool = False
    read_only: bool = False
    schema: ItemSchema | None = None


@dataclass(frozen=True)
class CloseReq:
    container_id: int


@dataclass(frozen=True)
class FreezeReq:
    container_id: int
    lo: int | None = None       # both None freezes the whole container
    hi: int | None = None


@dataclass(frozen=True)
class UnfreezeReq:
    token_id: int


TARGET_CONTAINER = 0
TARGET_TOKEN = 1


@dataclass(frozen=True)
class GetReq:
    target_kind: int            # TARGET_CONTAINER or TARGET_TOKEN
    target_id: int
    predicate: bytes            # encoded predicate tree


SOURCE_HANDLE = 0
SOURCE_RANGE = 1
SOURCE_TRIGGER_LOG = 2
SOURCE_TRIGGER_REGS = 3


@dataclass(frozen=True)
class ReadReq:
    source_kind: int
    source_id: int              # handle id, container id, or 0
    offset: int = 0
    count: int = 0xFFFFFFFF


@dataclass(frozen=True)
class WriteReq:
    handle_id: int
    dest_name: str


@dataclass(frozen=True)
class SetReq:
    container_id: int
    predicate: bytes
    mutation: bytes


@dataclass(frozen=True)
class ExecuteReq:
    program: bytes
    targets: tuple[int, ...]


NOTIFY_NONE = 0
NOTIFY_INTERRUPT = 1


@dataclass(frozen=True)
class SubmitAsyncReq:
    notify: int
    op_msg_type: int
    op_payload: bytes


POLL_BY_SEQ = 0
POLL_NEXT_NOWAIT = 1
POLL_NEXT_WAIT = 2


@dataclass(frozen=True)
class PollCompletionReq:
    mode: int
    seq: int = 0


@dataclass(frozen=True)
class DelayedEnqueueReq:
    op_msg_type: int
    op_payload: bytes


@dataclass(frozen=True)
class DelayedFlushReq:
    pass


@dataclass(frozen=True)
class TriggerRegisterReq:
    container_id: int
    event: int                  # TriggerEvent value
    predicate: bytes
    action: bytes               # encoded mutation or program tree
    enabled: bool = True


@dataclass(frozen=True)
class TriggerUnregisterReq:
    trigger_id: int


@dataclass(frozen=True)
class MetricsReq:
    pass


@dataclass(frozen=True)
class AppendReq:
    container_id: int
    items: tuple[bytes, ...]    # encoded item blobs


@dataclass(frozen=True)
class CreateContainerReq:
    name: str
    schema: ItemSchema


@dataclass(frozen=True)
class DeleteReq:
    container_id: int
    indices: tuple[int, ...]


# ---------------------------------------------------------------------------
# Responses


@dataclass(frozen=True)
class OpenResp:
    container_id: int
    schema: ItemSchema


HANDLE_INDEX_SET = 0
HANDLE_MATERIALIZED = 1


@dataclass(frozen=True)
class HandleInfo:
    handle_id: int
    kind: int                   # HANDLE_INDEX_SET or HANDLE_MATERIALIZED
    cardinality: int
    container_id: int
    generation: int


@dataclass(frozen=True)
class FreezeResp:
    token_id: int
    lo: int
    hi: int
    generation: int


@dataclass(frozen=True)
class ReadResp:
    entries: tuple[tuple[int, bytes], ...]   # (index or ordinal, blob)


@dataclass(frozen=True)
class WriteResp:
    container_id: int


@dataclass(frozen=True)
class SetResp:
    count: int
    generation: int


@dataclass(frozen=True)
class ScalarResult:
    kind: Kind
    value: object


@dataclass(frozen=True)
class SubmitAsyncResp:
    seq: int


@dataclass(frozen=True)
class DelayedEnqueueResp:
    seq: int


@dataclass(frozen=True)
class TriggerRegisterResp:
    trigger_id: int


@dataclass(frozen=True)
class MetricsResp:
    host_bytes_in: int
    host_bytes_out: int
    device_items_scanned: int
    requests_completed: int


@dataclass(frozen=True)
class AppendResp:
    first_index: int
    generation: int


@dataclass(frozen=True)
class CreateContainerResp:
    container_id: int


@dataclass(frozen=True)
class DeleteResp:
    count: int
    generation: int


@dataclass(frozen=True)
class CompletionRecord:
    """Outcome of one accepted request, delivered exactly once.

    `status` is 0 on success, otherwise the error code; `result` holds the
    operation's response payload on success and the UTF-8 error message
    otherwise.  `host_bytes` is the request plus response frame footprint.
    """

    seq: int
    op_msg_type: int
    status: int
    items_scanned: int
    items_matched: int
    host_bytes: int
    result: bytes = field(repr=False, default=b"")

    @property
    def ok(self) -> bool:
        return self.status == 0

    def raise_if_error(self) -> None:
        if self.status != 0:
            raise_for_code(self.status, self.result.decode("utf-8", "replace"))

    def response(self):
        self.raise_if_error()
        return decode_response(self.op_msg_type, self.result)


# ---------------------------------------------------------------------------
# Scalar values

_SCALAR_TAG = {Kind.U64: 0x02, Kind.I64: 0x03, Kind.F64: 0x04,
               Kind.BOOL: 0x05, Kind.UTF8: 0x06}
_TAG_SCALAR = {v: k for k, v in _SCALAR_TAG.items()}


def encode_scalar(kind: Kind, value) -> bytes:
    tag = U8.pack(_SCALAR_TAG[kind])
    if kind is Kind.U64:
        return tag + U64.pack(value)
    if kind is Kind.I64:
        return tag + I64.pack(value)
    if kind is Kind.F64:
        return tag + F64.pack(value)
    if kind is Kind.BOOL:
        return tag + U8.pack(1 if value else 0)
    raw = value.encode("utf-8")
    return tag + U32.pack(len(raw)) + raw


def decode_scalar(data: bytes) -> ScalarResult:
    cur = _Cur(data)
    result = _scalar_from(cur)
    cur.finish()
    return result


def _scalar_from(cur: _Cur) -> ScalarResult:
    tag = cur.u8()
    kind = _TAG_SCALAR.get(tag)
    if kind is None:
        raise DecodeError(f"unknown scalar tag 0x{tag:02x}")
    if kind is Kind.U64:
        return ScalarResult(kind, U64.unpack(cur.take(8))[0])
    if kind is Kind.I64:
        return ScalarResult(kind, I64.unpack(cur.take(8))[0])
    if kind is Kind.F64:
        return ScalarResult(kind, F64.unpack(cur.take(8))[0])
    if kind is Kind.BOOL:
        b = cur.u8()
        if b > 1:
            raise DecodeError(f"bad bool byte 0x{b:02x}")
        return ScalarResult(kind, bool(b))
    raw = cur.blob()
    try:
        return ScalarResult(kind, raw.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise DecodeError(f"scalar is not valid UTF-8: {exc}") from None


# ---------------------------------------------------------------------------
# Request codec

def encode_request(req) -> tuple[int, bytes]:
    """Encode a request dataclass to (msg_type, payload)."""
    mt, enc, _ = _OPS[type(req).__name__]
    return mt, enc(req)


def decode_request(msg_type: int, payload: bytes):
    entry = _BY_TYPE.get(msg_type)
    if entry is None:
        raise BadRequest(f"unknown message type 0x{msg_type:02x}")
    cur = _Cur(payload)
    req = entry[2](cur)
    cur.finish()
    return req


def pack_op(msg_type: int, payload: bytes) -> bytes:
    """Bundle an op for the journal or an async/delayed wrapper."""
    return U8.pack(msg_type) + payload


def unpack_op(blob: bytes) -> tuple[int, bytes]:
    if not blob:
        raise Truncated("empty op blob")
    return blob[0], blob[1:]


def _enc_ping(req: PingReq) -> bytes:
    return b""


def _dec_ping(cur: _Cur) -> PingReq:
    return PingReq()


def _enc_open(req: OpenReq) -> bytes:
    flags = (1 if req.create else 0) | (2 if req.read_only else 0)
    out = U8.pack(flags) + _name(req.name)
    if req.schema is None:
        return out + U8.pack(0)
    return out + U8.pack(1) + encode_schema(req.schema)


def _dec_open(cur: _Cur) -> OpenReq:
    flags = cur.u8()
    if flags > 3:
        raise DecodeError(f"bad open flags 0x{flags:02x}")
    name = cur.name()
    has_schema = cur.u8()
    if has_schema > 1:
        raise DecodeError(f"bad schema marker 0x{has_schema:02x}")
    schema = cur.schema() if has_schema else None
    return OpenReq(name, create=bool(flags & 1), read_only=bool(flags & 2),
                   schema=schema)


def _enc_close(req: CloseReq) -> bytes:
    return U64.pack(req.container_id)


def _dec_close(cur: _Cur) -> CloseReq:
    return CloseReq(cur.u64())


def _enc_freeze(req: FreezeReq) -> bytes:
    if (req.lo is None) != (req.hi is None):
        raise BadRequest("freeze range needs both bounds or neither")
    if req.lo is None:
        return U64.pack(req.container_id) + U8.pack(0)
    return (U64.pack(req.container_id) + U8.pack(1)
            + U64.pack(req.lo) + U64.pack(req.hi))


def _dec_freeze(cur: _Cur) -> FreezeReq:
    cid = cur.u64()
    has_range = cur.u8()
    if has_range > 1:
        raise DecodeError(f"bad range marker 0x{has_range:02x}")
    if not has_range:
        return FreezeReq(cid)
    return FreezeReq(cid, cur.u64(), cur.u64())


def _enc_unfreeze(req: UnfreezeReq) -> bytes:
    return U64.pack(req.token_id)


def _dec_unfreeze(cur: _Cur) -> UnfreezeReq:
    return UnfreezeReq(cur.u64())


def _enc_get(req: GetReq) -> bytes:
    return U8.pack(req.target_kind) + U64.pack(req.target_id) + _blob(req.predicate)


def _dec_get(cur: _Cur) -> GetReq:
    kind = cur.u8()
    if kind not in (TARGET_CONTAINER, TARGET_TOKEN):
        raise DecodeError(f"bad get target kind 0x{kind:02x}")
    return GetReq(kind, cur.u64(), cur.blob())


def _enc_read(req: ReadReq) -> bytes:
    return (U8.pack(req.source_kind) + U64.pack(req.source_id)
            + U64.pack(req.offset) + U64.pack(req.count))


def _dec_read(cur: _Cur) -> ReadReq:
    kind = cur.u8()
    if kind not in (SOURCE_HANDLE, SOURCE_RANGE, SOURCE_TRIGGER_LOG,
                    SOURCE_TRIGGER_REGS):
        raise DecodeError(f"bad read source kind 0x{kind:02x}")
    return ReadReq(kind, cur.u64(), cur.u64(), cur.u64())


def _enc_write(req: WriteReq) -> bytes:
    return U64.pack(req.handle_id) + _name(req.dest_name)


def _dec_write(cur: _Cur) -> WriteReq:
    return WriteReq(cur.u64(), cur.name())


def _enc_set(req: SetReq) -> bytes:
    return U64.pack(req.container_id) + _blob(req.predicate) + _blob(req.mutation)


def _dec_set(cur: _Cur) -> SetReq:
    return SetReq(cur.u64(), cur.blob(), cur.blob())


def _enc_execute(req: ExecuteReq) -> bytes:
    out = _blob(req.program) + U32.pack(len(req.targets))
    return out + b"".join(U64.pack(t) for t in req.targets)


def _dec_execute(cur: _Cur) -> ExecuteReq:
    program = cur.blob()
    n = cur.u32()
    return ExecuteReq(program, tuple(cur.u64() for _ in range(n)))


def _enc_submit(req: SubmitAsyncReq) -> bytes:
    return (U8.pack(req.notify) + U8.pack(req.op_msg_type)
            + _blob(req.op_payload))


def _dec_submit(cur: _Cur) -> SubmitAsyncReq:
    notify = cur.u8()
    if notify not in (NOTIFY_NONE, NOTIFY_INTERRUPT):
        raise DecodeError(f"bad notify mode 0x{notify:02x}")
    return SubmitAsyncReq(notify, cur.u8(), cur.blob())


def _enc_poll(req: PollCompletionReq) -> bytes:
    return U8.pack(req.mode) + U64.pack(req.seq)


def _dec_poll(cur: _Cur) -> PollCompletionReq:
    mode = cur.u8()
    if mode not in (POLL_BY_SEQ, POLL_NEXT_NOWAIT, POLL_NEXT_WAIT):
        raise DecodeError(f"bad poll mode 0x{mode:02x}")
    return PollCompletionReq(mode, cur.u64())


def _enc_enqueue(req: DelayedEnqueueReq) -> bytes:
    return U8.pack(req.op_msg_type) + _blob(req.op_payload)


def _dec_enqueue(cur: _Cur) -> DelayedEnqueueReq:
    return DelayedEnqueueReq(cur.u8(), cur.blob())


def _enc_flush(req: DelayedFlushReq) -> bytes:
    return b""


def _dec_flush(cur: _Cur) -> DelayedFlushReq:
    return DelayedFlushReq()


def _enc_trig_reg(req: TriggerRegisterReq) -> bytes:
    return (U64.pack(req.container_id) + U8.pack(req.event)
            + U8.pack(1 if req.enabled else 0)
            + _blob(req.predicate) + _blob(req.action))


def _dec_trig_reg(cur: _Cur) -> TriggerRegisterReq:
    cid = cur.u64()
    event = cur.u8()
    if event not in (1, 2, 3):
        raise DecodeError(f"bad trigger event 0x{event:02x}")
    enabled = cur.u8()
    if enabled > 1:
        raise DecodeError(f"bad enabled byte 0x{enabled:02x}")
    return TriggerRegisterReq(cid, event, cur.blob(), cur.blob(),
                              enabled=bool(enabled))


def _enc_trig_unreg(req: TriggerUnregisterReq) -> bytes:
    return U64.pack(req.trigger_id)


def _dec_trig_unreg(cur: _Cur) -> TriggerUnregisterReq:
    return TriggerUnregisterReq(cur.u64())


def _enc_metrics(req: MetricsReq) -> bytes:
    return b""


def _dec_metrics(cur: _Cur) -> MetricsReq:
    return MetricsReq()


def _enc_append(req: AppendReq) -> bytes:
    out = U64.pack(req.container_id) + U32.pack(len(req.items))
    return out + b"".join(_blob(item) for item in req.items)


def _dec_append(cur: _Cur) -> AppendReq:
    cid = cur.u64()
    n = cur.u32()
    return AppendReq(cid, tuple(cur.blob() for _ in range(n)))


def _enc_create(req: CreateContainerReq) -> bytes:
    return _name(req.name) + encode_schema(req.schema)


def _dec_create(cur: _Cur) -> CreateContainerReq:
    return CreateContainerReq(cur.name(), cur.schema())


def _enc_delete(req: DeleteReq) -> bytes:
    out = U64.pack(req.container_id) + U32.pack(len(req.indices))
    return out + b"".join(U64.pack(i) for i in req.indices)


def _dec_delete(cur: _Cur) -> DeleteReq:
    cid = cur.u64()
    n = cur.u32()
    return DeleteReq(cid, tuple(cur.u64() for _ in range(n)))


_OPS = {
    "PingReq": (MsgType.PING, _enc_ping, _dec_ping),
    "OpenReq": (MsgType.OPEN, _enc_open, _dec_open),
    "CloseReq": (MsgType.CLOSE, _enc_close, _dec_close),
    "FreezeReq": (MsgType.FREEZE, _enc_freeze, _dec_freeze),
    "UnfreezeReq": (MsgType.UNFREEZE, _enc_unfreeze, _dec_unfreeze),
    "GetReq": (MsgType.GET, _enc_get, _dec_get),
    "ReadReq": (MsgType.READ, _enc_read, _dec_read),
    "WriteReq": (MsgType.WRITE, _enc_write, _dec_write),
    "SetReq": (MsgType.SET, _enc_set, _dec_set),
    "ExecuteReq": (MsgType.EXECUTE, _enc_execute, _dec_execute),
    "SubmitAsyncReq": (MsgType.SUBMIT_ASYNC, _enc_submit, _dec_submit),
    "PollCompletionReq": (MsgType.POLL_COMPLETION, _enc_poll, _dec_poll),
    "DelayedEnqueueReq": (MsgType.DELAYED_ENQUEUE, _enc_enqueue, _dec_enqueue),
    "DelayedFlushReq": (MsgType.DELAYED_FLUSH, _enc_flush, _dec_flush),
    "TriggerRegisterReq": (MsgType.TRIGGER_REGISTER, _enc_trig_reg, _dec_trig_reg),
    "TriggerUnregisterReq": (MsgType.TRIGGER_UNREGISTER, _enc_trig_unreg,
                             _dec_trig_unreg),
    "MetricsReq": (MsgType.METRICS, _enc_metrics, _dec_metrics),
    "AppendReq": (MsgType.APPEND, _enc_append, _dec_append),
    "CreateContainerReq": (MsgType.CREATE_CONTAINER, _enc_create, _dec_create),
    "DeleteReq": (MsgType.DELETE, _enc_delete, _dec_delete),
}
_BY_TYPE = {int(mt): (mt, enc, dec) for mt, enc, dec in _OPS.values()}


# ---------------------------------------------------------------------------
# Response codec

def _enc_handle(h: HandleInfo) -> bytes:
    return (U64.pack(h.handle_id) + U8.pack(h.kind) + U64.pack(h.cardinality)
            + U64.pack(h.container_id) + U64.pack(h.generation))


def _dec_handle(cur: _Cur) -> HandleInfo:
    hid = cur.u64()
    kind = cur.u8()
    if kind not in (HANDLE_INDEX_SET, HANDLE_MATERIALIZED):
        raise DecodeError(f"bad handle kind 0x{kind:02x}")
    return HandleInfo(hid, kind, cur.u64(), cur.u64(), cur.u64())


def encode_completion(rec: CompletionRecord) -> bytes:
    return (U64.pack(rec.seq) + U8.pack(rec.op_msg_type) + U16.pack(rec.status)
            + U64.pack(rec.items_scanned) + U64.pack(rec.items_matched)
            + U64.pack(rec.host_bytes) + _blob(rec.result))


def _completion_from(cur: _Cur) -> CompletionRecord:
    return CompletionRecord(cur.u64(), cur.u8(), cur.u16(), cur.u64(),
                            cur.u64(), cur.u64(), cur.blob())


def decode_completion(data: bytes) -> CompletionRecord:
    cur = _Cur(data)
    rec = _completion_from(cur)
    cur.finish()
    return rec


def encode_response(msg_type: int, resp) -> bytes:
    mt = MsgType(msg_type)
    if mt is MsgType.POLL_COMPLETION:
        if resp is None:
            return U8.pack(0)
        return U8.pack(1) + encode_completion(resp)
    if resp is None:
        return b""
    if mt is MsgType.OPEN:
        return U64.pack(resp.container_id) + encode_schema(resp.schema)
    if mt is MsgType.FREEZE:
        return (U64.pack(resp.token_id) + U64.pack(resp.lo) + U64.pack(resp.hi)
                + U64.pack(resp.generation))
    if mt is MsgType.GET:
        return _enc_handle(resp)
    if mt is MsgType.READ:
        out = [U32.pack(len(resp.entries))]
        for index, blob in resp.entries:
            out.append(U64.pack(index))
            out.append(_blob(blob))
        return b"".join(out)
    if mt is MsgType.WRITE:
        return U64.pack(resp.container_id)
    if mt in (MsgType.SET, MsgType.DELETE):
        return U64.pack(resp.count) + U64.pack(resp.generation)
    if mt is MsgType.EXECUTE:
        if isinstance(resp, ScalarResult):
            return U8.pack(0) + encode_scalar(resp.kind, resp.value)
        return U8.pack(1) + _enc_handle(resp)
    if mt is MsgType.SUBMIT_ASYNC:
        return U64.pack(resp.seq)
    if mt is MsgType.DELAYED_ENQUEUE:
        return U64.pack(resp.seq)
    if mt is MsgType.DELAYED_FLUSH:
        out = [U32.pack(len(resp))]
        out.extend(_blob(encode_completion(rec)) for rec in resp)
        return b"".join(out)
    if mt is MsgType.TRIGGER_REGISTER:
        return U64.pack(resp.trigger_id)
    if mt is MsgType.METRICS:
        return (U64.pack(resp.host_bytes_in) + U64.pack(resp.host_bytes_out)
                + U64.pack(resp.device_items_scanned)
                + U64.pack(resp.requests_completed))
    if mt is MsgType.APPEND:
        return U64.pack(resp.first_index) + U64.pack(resp.generation)
    if mt is MsgType.CREATE_CONTAINER:
        return U64.pack(resp.container_id)
    raise BadRequest(f"no response body defined for {mt.name}")


def decode_response(msg_type: int, payload: bytes):
    mt = MsgType(msg_type)
    cur = _Cur(payload)
    resp = _decode_response_from(mt, cur)
    cur.finish()
    return resp


def _decode_response_from(mt: MsgType, cur: _Cur):
    if mt in (MsgType.PING, MsgType.CLOSE, MsgType.UNFREEZE,
              MsgType.TRIGGER_UNREGISTER):
        return None
    if mt is MsgType.OPEN:
        return OpenResp(cur.u64(), cur.schema())
    if mt is MsgType.FREEZE:
        return FreezeResp(cur.u64(), cur.u64(), cur.u64(), cur.u64())
    if mt is MsgType.GET:
        return _dec_handle(cur)
    if mt is MsgType.READ:
        n = cur.u32()
        return ReadResp(tuple((cur.u64(), cur.blob()) for _ in range(n)))
    if mt is MsgType.WRITE:
        return WriteResp(cur.u64())
    if mt is MsgType.SET:
        return SetResp(cur.u64(), cur.u64())
    if mt is MsgType.DELETE:
        return DeleteResp(cur.u64(), cur.u64())
    if mt is MsgType.EXECUTE:
        kind = cur.u8()
        if kind == 0:
            return _scalar_from(cur)
        if kind == 1:
            return _dec_handle(cur)
        raise DecodeError(f"bad execute result kind 0x{kind:02x}")
    if mt is MsgType.SUBMIT_ASYNC:
        return SubmitAsyncResp(cur.u64())
    if mt is MsgType.POLL_COMPLETION:
        present = cur.u8()
        if present > 1:
            raise DecodeError(f"bad completion marker 0x{present:02x}")
        return _completion_from(cur) if present else None
    if mt is MsgType.DELAYED_ENQUEUE:
        return DelayedEnqueueResp(cur.u64())
    if mt is MsgType.DELAYED_FLUSH:
        n = cur.u32()
        return tuple(decode_completion(cur.blob()) for _ in range(n))
    if mt is MsgType.TRIGGER_REGISTER:
        return TriggerRegisterResp(cur.u64())
    if mt is MsgType.METRICS:
        return MetricsResp(cur.u64(), cur.u64(), cur.u64(), cur.u64())
    if mt is MsgType.APPEND:
        return AppendResp(cur.u64(), cur.u64())
    if mt is MsgType.CREATE_CONTAINER:
        return CreateContainerResp(cur.u64())
    raise BadRequest(f"no response body defined for {mt.name}")


# ---------------------------------------------------------------------------
# Unsolicited notification payloads

NOTIFY_KIND_COMPLETION = 0
NOTIFY_KIND_TRIGGER = 1


def encode_notify_completion(rec: CompletionRecord) -> bytes:
    return U8.pack(NOTIFY_KIND_COMPLETION) + encode_completion(rec)


def encode_notify_trigger(body: bytes) -> bytes:
    return U8.pack(NOTIFY_KIND_TRIGGER) + body


def decode_notify(payload: bytes) -> tuple[str, object]:
    """Returns ("completion", CompletionRecord) or ("trigger", body bytes)."""
    cur = _Cur(payload)
    kind = cur.u8()
    if kind == NOTIFY_KIND_COMPLETION:
        rec = _completion_from(cur)
        cur.finish()
        return "completion", rec
    if kind == NOTIFY_KIND_TRIGGER:
        return "trigger", bytes(cur.data[cur.pos:])
    raise DecodeError(f"bad notification kind 0x{kind:02x}")


# ---------------------------------------------------------------------------
# Error payloads, trigger log records, trigger registrations

def encode_error(code: int, message: str) -> bytes:
    raw = message.encode("utf-8")
    return U16.pack(code) + U32.pack(len(raw)) + raw


def decode_error(payload: bytes) -> tuple[int, str]:
    cur = _Cur(payload)
    code = cur.u16()
    raw = cur.blob()
    cur.finish()
    return code, raw.decode("utf-8", "replace")


def encode_trigger_record(trigger_id: int, causing_seq: int, event: int,
                          payload: bytes) -> bytes:
    """Body of one trigger log record; the store adds length and CRC framing."""
    return (U64.pack(trigger_id) + U64.pack(causing_seq) + U8.pack(event)
            + payload)


@dataclass(frozen=True)
class TriggerLogRecord:
    trigger_id: int
    causing_seq: int
    event: TriggerEvent
    payload: bytes

    def affected_index(self) -> int:
        if len(self.payload) != 8:
            raise DecodeError(f"index payload must be 8 bytes, "
                              f"got {len(self.payload)}")
        return U64.unpack(self.payload)[0]

    def scalar(self) -> ScalarResult:
        return decode_scalar(self.payload)


def decode_trigger_record(body: bytes) -> TriggerLogRecord:
    cur = _Cur(body)
    tid = cur.u64()
    seq = cur.u64()
    event = cur.u8()
    if event not in (1, 2, 3):
        raise DecodeError(f"bad trigger event 0x{event:02x}")
    return TriggerLogRecord(tid, seq, TriggerEvent(event),
                            bytes(cur.data[cur.pos:]))


def encode_registration(trigger_id: int, container_id: int, event: int,
                        enabled: bool, predicate: bytes, action: bytes) -> bytes:
    return (U64.pack(trigger_id) + U64.pack(container_id) + U8.pack(event)
            + U8.pack(1 if enabled else 0) + _blob(predicate) + _blob(action))


@dataclass(frozen=True)
class Registration:
    trigger_id: int
    container_id: int
    event: TriggerEvent
    enabled: bool
    predicate: bytes
    action: bytes


def decode_registration(blob: bytes) -> Registration:
    cur = _Cur(blob)
    tid = cur.u64()
    cid = cur.u64()
    event = cur.u8()
    if event not in (1, 2, 3):
        raise DecodeError(f"bad trigger event 0x{event:02x}")
    enabled = cur.u8()
    if enabled > 1:
        raise DecodeError(f"bad enabled byte 0x{enabled:02x}")
    reg = Registration(tid, cid, TriggerEvent(event), bool(enabled),
                       cur.blob(), cur.blob())
    cur.finish()
    return reg
