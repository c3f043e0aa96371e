"""Device-side persistent volume: containers, journal, triggers, freezes.

A volume is a directory:

    superblock.ndp    magic "NDPVOL01", version u32=1, next_container_id u64,
                      next_request_seq u64 (all LE); rewritten atomically
    catalog.ndp       authoritative logical state, rewritten atomically per
                      committed mutation batch (layout below)
    c<ID>.dat         append-only item records (canonical item encoding)
    c<ID>.idx         u64 LE byte offset per item index, append-only
    c<ID>.del         tombstone bitmap, 1 bit per index (mirror of catalog)
    journal.ndp       delayed requests: u32 LE body length, body (u64 LE seq +
                      request bytes), u32 LE CRC-32 of the body
    journal.mark      u64 LE highest processed seq (mirror of catalog)
    triggers.ndp      persisted trigger registrations
    trigger_log.ndp   append-only fired-trigger records: u32 LE body length,
                      body (opaque here), u32 LE CRC-32 of the body

catalog.ndp layout: magic "NDPCAT01", watermark u64, trigger log committed
length u64, container count u32, then per container: id u64, name (u16 len +
utf8), schema bytes, item_count u64, generation u64, data_end u64, tombstone
bitmap (ceil(item_count/8) bytes), remap count u32 + (u64 index, u64 offset)
pairs; finally CRC-32 of everything before it.

Crash safety holds because committed bytes are never modified: item data,
offsets, journal records and trigger-log records are append-only, and
replacing an item writes a new record then points the catalog's remap table
at it.  The catalog rename is the single commit point for any mutation
batch; the watermark for delayed-request replay rides in the same rename,
which is what makes replay exactly-once (see test suite).  The mirrors are
kept convergent across crashes: `.del` (never read back) is written just
before the rename, so dying at the commit point leaves it either already
correct or ahead by exactly the batch that replay will redo; `journal.mark`
must never run ahead of the catalog (open honors the larger of the two), so
it is written after the rename and refreshed on open if a crash left it
behind.

Durability is modeled at process level (buffered writes are flushed to the
OS before an operation returns; no fsync), which is what the kill-and-reopen
tests exercise.

Concurrency: one reentrant volume-wide lock serializes all operations;
mutations are single-writer by construction and every public method may be
called from any thread.  Freeze tokens pin an in-memory snapshot of their
range and are not persisted; reopening a volume drops them.
"""

from __future__ import annotations

import os
import struct
import threading
import zlib
from dataclasses import dataclass

from .errors import (
    AlreadyExists,
    BadVersion,
    CorruptCatalog,
    ErrFrozen,
    IndexOutOfBounds,
    InvalidSchema,
    NameInUse,
    NoSuchContainer,
    NoSuchToken,
    NoSuchTrigger,
    NotAVolume,
    RangeOutOfBounds,
    Tombstoned,
)
from .items import (
    ItemSchema,
    decode_item_from,
    decode_schema_from,
    encode_item,
    encode_schema,
    validate_item,
)

SUPERBLOCK_MAGIC = b"NDPVOL01"
CATALOG_MAGIC = b"NDPCAT01"
VERSION = 1
SEQ_RESERVE = 1024

_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


class SimulatedCrash(Exception):
    """Raised by test hooks to abandon a volume mid-operation."""


@dataclass(frozen=True)
class FreezeToken:
    token_id: int
    container_id: int
    lo: int
    hi: int
    generation_at_freeze: int


@dataclass(frozen=True)
class TriggerRec:
    """Persisted trigger registration; pred/action stay opaque bytes here."""

    trigger_id: int
    container_id: int
    event: int
    enabled: bool
    pred: bytes
    action: bytes


class _Staged:
    """Post-commit image of a container, used to render the new catalog."""

    def __init__(self, c: "_Container", item_count: int, generation: int,
                 data_end: int, tombstones: set, remap: dict):
        self.cid = c.cid
        self.name = c.name
        self.schema = c.schema
        self.item_count = item_count
        self.generation = generation
        self.data_end = data_end
        self.tombstones = tombstones
        self.remap = remap


def _atomic_write(path: str, data: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


class _Container:
    """Runtime state for one container; owned by Volume, lock held by caller."""

    def __init__(self, volume_root: str, cid: int, name: str, schema: ItemSchema):
        self.cid = cid
        self.name = name
        self.schema = schema
        self.item_count = 0
        self.generation = 0
        self.data_end = 0
        self.offsets: list[int] = []        # base offset per index
        self.remap: dict[int, int] = {}     # index -> replacement offset
        self.tombstones: set[int] = set()
        self.items: list = []               # decoded cache, None = not loaded
        self.loaded = False
        self._root = volume_root
        dat = os.path.join(volume_root, f"c{cid}.dat")
        idx = os.path.join(volume_root, f"c{cid}.idx")
        for p in (dat, idx):
            if not os.path.exists(p):
                open(p, "wb").close()
        self.dat_fd = os.open(dat, os.O_RDWR)
        self.idx_fd = os.open(idx, os.O_RDWR)

    def close(self):
        os.close(self.dat_fd)
        os.close(self.idx_fd)

    def offset_of(self, index: int) -> int:
        return self.remap.get(index, self.offsets[index])

    def load_offsets(self):
        raw = os.pread(self.idx_fd, self.item_count * 8, 0)
        if len(raw) < self.item_count * 8:
            raise CorruptCatalog("offset file shorter than item_count",
                                 container=self.cid)
        self.offsets = list(struct.unpack(f"<{self.item_count}Q", raw))

    def ensure_loaded(self):
        if self.loaded:
            return
        buf = os.pread(self.dat_fd, self.data_end, 0)
        if len(buf) < self.data_end:
            raise CorruptCatalog("data file shorter than committed length",
                                 container=self.cid)
        self.items = [None] * self.item_count
        for i in range(self.item_count):
            item, _ = decode_item_from(self.schema, buf, self.offset_of(i))
            self.items[i] = item
        self.loaded = True

    def live_count(self) -> int:
        return self.item_count - len(self.tombstones)


class Batch:
    """Staged mutations for one container, committed as one generation bump.

    Appends, replacements, deletes and trigger-log records staged here become
    visible atomically at commit.  Replacements and deletes address only
    indices that existed before the batch.
    """

    def __init__(self, volume: "Volume", container: _Container):
        self.volume = volume
        self.c = container
        self.appends: list = []
        self.sets: dict[int, tuple] = {}
        self.deletes: set[int] = set()
        self.log_records: list[bytes] = []

    def _check_mutable(self, index: int):
        c = self.c
        if not 0 <= index < c.item_count:
            raise IndexOutOfBounds(f"index {index} not in [0, {c.item_count})",
                                   container=c.cid)
        if index in c.tombstones or index in self.deletes:
            raise Tombstoned(f"index {index} is deleted", container=c.cid)
        for tok in self.volume._tokens.values():
            if tok.container_id == c.cid and tok.lo <= index < tok.hi:
                raise ErrFrozen(f"index {index} inside frozen range "
                                f"[{tok.lo}, {tok.hi})", token=tok.token_id)

    def append(self, items) -> int:
        """Stage items for the tail; returns the index the first one will get."""
        for item in items:
            validate_item(self.c.schema, item)
        first = self.c.item_count + len(self.appends)
        self.appends.extend(tuple(it) for it in items)
        return first

    def set(self, index: int, item) -> None:
        validate_item(self.c.schema, item)
        self._check_mutable(index)
        self.sets[index] = tuple(item)

    def delete(self, indices) -> int:
        for index in indices:
            self._check_mutable(index)
        self.deletes.update(indices)
        return len(set(indices))

    def log(self, record: bytes) -> None:
        self.log_records.append(record)

    @property
    def dirty(self) -> bool:
        return bool(self.appends or self.sets or self.deletes or self.log_records)

    def commit(self, watermark: int | None = None) -> int:
        return self.volume._commit(self, watermark)


class Volume:
    """One mounted volume; create with Volume.create, load with Volume.open."""

    def __init__(self, root: str):
        self.root = root
        self.lock = threading.RLock()
        self.hooks: dict = {}
        self.containers: dict[int, _Container] = {}
        self.next_container_id = 1
        self.watermark = 0
        self.log_end = 0
        self.triggers: dict[int, TriggerRec] = {}
        self._tokens: dict[int, FreezeToken] = {}
        self._frozen_view: dict[int, list] = {}
        self._next_token = 1
        self._seq = 0
        self._seq_limit = 0
        self._journal_fd = None
        self._log_fd = None
        self._journal_records: list[tuple[int, bytes]] = []
        self._closed = False

    # -- lifecycle --

    @classmethod
    def create(cls, root: str) -> "Volume":
        if os.path.exists(root):
            if not os.path.isdir(root) or os.listdir(root):
                raise AlreadyExists("path exists and is not an empty directory",
                                    path=root)
        else:
            os.makedirs(root)
        vol = cls(root)
        vol._seq = 1
        vol._seq_limit = 1
        vol._write_superblock(next_container_id=1, next_seq=1)
        vol._write_catalog()
        for name in ("journal.ndp", "trigger_log.ndp", "triggers.ndp"):
            open(os.path.join(root, name), "wb").close()
        _atomic_write(os.path.join(root, "journal.mark"), _U64.pack(0))
        vol._open_files()
        return vol

    @classmethod
    def open(cls, root: str) -> "Volume":
        sb_path = os.path.join(root, "superblock.ndp")
        if not os.path.isdir(root) or not os.path.exists(sb_path):
            raise NotAVolume("no volume at path", path=root)
        raw = open(sb_path, "rb").read()
        if len(raw) != 28 or raw[:8] != SUPERBLOCK_MAGIC:
            raise NotAVolume("bad superblock", path=root)
        version = _U32.unpack_from(raw, 8)[0]
        if version != VERSION:
            raise BadVersion(f"volume format {version}, expected {VERSION}")
        vol = cls(root)
        vol.next_container_id = _U64.unpack_from(raw, 12)[0]
        seq = _U64.unpack_from(raw, 20)[0]
        try:
            vol._load_catalog()
            vol._load_triggers()
            vol._load_journal()
        except Exception:
            vol.close()
            raise
        mark_path = os.path.join(root, "journal.mark")
        mark = None
        if os.path.exists(mark_path):
            mraw = open(mark_path, "rb").read()
            if len(mraw) == 8:
                mark = _U64.unpack(mraw)[0]
                vol.watermark = max(vol.watermark, mark)
        if mark != vol.watermark:
            # a crash between catalog rename and mirror write leaves the
            # mark behind; refresh it so recovery converges byte-for-byte
            vol._write_mark_mirror()
        # reserve a block of request seqs; crash loses at most the block
        vol._seq = seq
        vol._seq_limit = seq + SEQ_RESERVE
        vol._write_superblock(vol.next_container_id, vol._seq_limit)
        vol._open_files()
        return vol

    def close(self):
        with self.lock:
            if self._closed:
                return
            self._closed = True
            for c in self.containers.values():
                c.close()
            if self._journal_fd is not None:
                os.close(self._journal_fd)
            if self._log_fd is not None:
                os.close(self._log_fd)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _open_files(self):
        self._journal_fd = os.open(os.path.join(self.root, "journal.ndp"),
                                   os.O_RDWR | os.O_CREAT)
        self._log_fd = os.open(os.path.join(self.root, "trigger_log.ndp"),
                               os.O_RDWR | os.O_CREAT)

    def _fire(self, hook: str, **info):
        fn = self.hooks.get(hook)
        if fn is not None:
            fn(hook, info)

    # -- superblock / catalog --

    def _write_superblock(self, next_container_id: int, next_seq: int):
        data = (SUPERBLOCK_MAGIC + _U32.pack(VERSION)
                + _U64.pack(next_container_id) + _U64.pack(next_seq))
        _atomic_write(os.path.join(self.root, "superblock.ndp"), data)

    def _catalog_bytes(self, containers=None, watermark=None, log_end=None) -> bytes:
        parts = [CATALOG_MAGIC,
                 _U64.pack(self.watermark if watermark is None else watermark),
                 _U64.pack(self.log_end if log_end is None else log_end)]
        cons = self.containers if containers is None else containers
        parts.append(_U32.pack(len(cons)))
        for c in cons.values():
            name_raw = c.name.encode("utf-8")
            parts.append(_U64.pack(c.cid))
            parts.append(_U16.pack(len(name_raw)))
            parts.append(name_raw)
            parts.append(encode_schema(c.schema))
            parts.append(_U64.pack(c.item_count))
            parts.append(_U64.pack(c.generation))
            parts.append(_U64.pack(c.data_end))
            bitmap = bytearray((c.item_count + 7) // 8)
            for i in c.tombstones:
                bitmap[i // 8] |= 1 << (i % 8)
            parts.append(bytes(bitmap))
            parts.append(_U32.pack(len(c.remap)))
            for idx in sorted(c.remap):
                parts.append(_U64.pack(idx))
                parts.append(_U64.pack(c.remap[idx]))
        body = b"".join(parts)
        return body + _U32.pack(zlib.crc32(body))

    def _write_catalog(self, **kw):
        _atomic_write(os.path.join(self.root, "catalog.ndp"),
                      self._catalog_bytes(**kw))

    def _load_catalog(self):
        path = os.path.join(self.root, "catalog.ndp")
        if not os.path.exists(path):
            raise NotAVolume("catalog missing", path=self.root)
        raw = open(path, "rb").read()
        if len(raw) < 24 or raw[:8] != CATALOG_MAGIC:
            raise CorruptCatalog("bad catalog header")
        body, crc = raw[:-4], _U32.unpack(raw[-4:])[0]
        if zlib.crc32(body) != crc:
            raise CorruptCatalog("catalog checksum mismatch")
        try:
            self._parse_catalog(body)
        except (struct.error, IndexError):
            raise CorruptCatalog("catalog truncated") from None

    def _parse_catalog(self, body: bytes):
        self.watermark = _U64.unpack_from(body, 8)[0]
        self.log_end = _U64.unpack_from(body, 16)[0]
        count = _U32.unpack_from(body, 24)[0]
        pos = 28
        for _ in range(count):
            cid = _U64.unpack_from(body, pos)[0]
            pos += 8
            nlen = _U16.unpack_from(body, pos)[0]
            pos += 2
            name = body[pos:pos + nlen].decode("utf-8")
            pos += nlen
            schema, pos = decode_schema_from(body, pos)
            c = _Container(self.root, cid, name, schema)
            c.item_count = _U64.unpack_from(body, pos)[0]
            c.generation = _U64.unpack_from(body, pos + 8)[0]
            c.data_end = _U64.unpack_from(body, pos + 16)[0]
            pos += 24
            bits = (c.item_count + 7) // 8
            bitmap = body[pos:pos + bits]
            pos += bits
            for i in range(c.item_count):
                if bitmap[i // 8] >> (i % 8) & 1:
                    c.tombstones.add(i)
            nremap = _U32.unpack_from(body, pos)[0]
            pos += 4
            for _ in range(nremap):
                idx = _U64.unpack_from(body, pos)[0]
                off = _U64.unpack_from(body, pos + 8)[0]
                c.remap[idx] = off
                pos += 16
            c.load_offsets()
            self.containers[cid] = c

    # -- container API --

    def _container(self, cid: int) -> _Container:
        c = self.containers.get(cid)
        if c is None:
            raise NoSuchContainer(f"no container {cid}")
        return c

    def container_id(self, name: str) -> int:
        with self.lock:
            for c in self.containers.values():
                if c.name == name:
                    return c.cid
        raise NoSuchContainer(f"no container named {name!r}")

    def container_names(self) -> list[tuple[int, str]]:
        with self.lock:
            return sorted((c.cid, c.name) for c in self.containers.values())

    def schema_of(self, cid: int) -> ItemSchema:
        with self.lock:
            return self._container(cid).schema

    def meta(self, cid: int) -> dict:
        with self.lock:
            c = self._container(cid)
            return {"id": c.cid, "name": c.name, "schema": c.schema,
                    "item_count": c.item_count, "generation": c.generation,
                    "live_count": c.live_count(), "data_end": c.data_end}

    def create_container(self, name: str, schema: ItemSchema) -> int:
        if not isinstance(schema, ItemSchema):
            raise InvalidSchema("schema must be an ItemSchema")
        with self.lock:
            for c in self.containers.values():
                if c.name == name:
                    raise NameInUse(f"container {name!r} exists", id=c.cid)
            cid = self.next_container_id
            self.next_container_id += 1
            self._write_superblock(self.next_container_id, self._seq_limit)
            self.containers[cid] = _Container(self.root, cid, name, schema)
            self.containers[cid].loaded = True
            self._write_catalog()
            return cid

    def batch(self, cid: int) -> Batch:
        with self.lock:
            return Batch(self, self._container(cid))

    def append_items(self, cid: int, items) -> tuple[int, int]:
        with self.lock:
            b = self.batch(cid)
            first = b.append(items)
            gen = b.commit()
            return first, gen

    def set_item(self, cid: int, index: int, item) -> int:
        with self.lock:
            b = self.batch(cid)
            b.set(index, item)
            return b.commit()

    def delete_items(self, cid: int, indices) -> tuple[int, int]:
        with self.lock:
            b = self.batch(cid)
            count = b.delete(indices)
            return count, b.commit()

    def read_items(self, cid: int, lo: int, hi: int) -> list[tuple[int, tuple]]:
        with self.lock:
            c = self._container(cid)
            if not 0 <= lo <= hi <= c.item_count:
                raise RangeOutOfBounds(f"[{lo}, {hi}) outside [0, {c.item_count}]",
                                       container=cid)
            c.ensure_loaded()
            return [(i, c.items[i]) for i in range(lo, hi)
                    if i not in c.tombstones]

    def get_item(self, cid: int, index: int) -> tuple:
        with self.lock:
            c = self._container(cid)
            if not 0 <= index < c.item_count:
                raise IndexOutOfBounds(f"index {index} not in [0, {c.item_count})",
                                       container=cid)
            if index in c.tombstones:
                raise Tombstoned(f"index {index} is deleted", container=cid)
            c.ensure_loaded()
            return c.items[index]

    def live_items(self, cid: int) -> list[tuple[int, tuple]]:
        """All live (index, item) pairs; the scan surface for device ops."""
        with self.lock:
            c = self._container(cid)
            c.ensure_loaded()
            if not c.tombstones:
                return list(enumerate(c.items))
            return [(i, it) for i, it in enumerate(c.items)
                    if i not in c.tombstones]

    def generation_of(self, cid: int) -> int:
        with self.lock:
            return self._container(cid).generation

    # -- commit --

    def _commit(self, batch: Batch, watermark: int | None) -> int:
        with self.lock:
            c = batch.c
            if not batch.dirty:
                if watermark is not None and watermark > self.watermark:
                    self._commit_watermark(watermark)
                return c.generation
            c.ensure_loaded()
            new_count = c.item_count + len(batch.appends)
            new_data_end = c.data_end
            new_offsets = []
            append_blob = bytearray()
            for item in batch.appends:
                raw = encode_item(c.schema, item)
                new_offsets.append(new_data_end + len(append_blob))
                append_blob.extend(raw)
            new_remap = dict(c.remap)
            for index, item in sorted(batch.sets.items()):
                raw = encode_item(c.schema, item)
                new_remap[index] = new_data_end + len(append_blob)
                append_blob.extend(raw)
            if append_blob:
                os.pwrite(c.dat_fd, bytes(append_blob), c.data_end)
                new_data_end += len(append_blob)
            if new_offsets:
                os.pwrite(c.idx_fd, struct.pack(f"<{len(new_offsets)}Q",
                                                *new_offsets),
                          c.item_count * 8)
            new_log_end = self.log_end
            for rec in batch.log_records:
                framed = _U32.pack(len(rec)) + rec + _U32.pack(zlib.crc32(rec))
                os.pwrite(self._log_fd, framed, new_log_end)
                new_log_end += len(framed)

            # single commit point: swap the staged state in via catalog rename
            staged = _Staged(c, new_count, c.generation + 1, new_data_end,
                             c.tombstones | batch.deletes, new_remap)
            wm = self.watermark if watermark is None else max(self.watermark,
                                                              watermark)
            if batch.deletes:
                # before the rename: a crash at the commit point must not
                # orphan the mirror, and replay rewrites these exact bytes
                # if we die before the rename instead
                self._write_del_mirror(c.cid, new_count, staged.tombstones)
            self._fire("commit.pre_rename", cid=c.cid, generation=staged.generation)
            _atomic_write(os.path.join(self.root, "catalog.ndp"),
                          self._catalog_with(c.cid, staged, wm, new_log_end))
            # rename done: apply to memory, then refresh the mirrors
            c.item_count = new_count
            c.generation = staged.generation
            c.data_end = new_data_end
            c.offsets.extend(new_offsets)
            c.remap = new_remap
            c.tombstones = staged.tombstones
            c.items.extend(batch.appends)
            for index, item in batch.sets.items():
                c.items[index] = item
            self.log_end = new_log_end
            old_wm = self.watermark
            self.watermark = wm
            self._fire("commit.post_rename", cid=c.cid, generation=c.generation)
            if wm != old_wm:
                self._write_mark_mirror()
            return c.generation

    def _catalog_with(self, cid: int, staged: "_Staged", watermark: int,
                      log_end: int) -> bytes:
        shadow = dict(self.containers)
        shadow[cid] = staged
        return self._catalog_bytes(containers=shadow, watermark=watermark,
                                   log_end=log_end)

    def _commit_watermark(self, watermark: int):
        self._fire("commit.pre_rename", cid=None, generation=None)
        self._write_catalog(watermark=watermark)
        self.watermark = watermark
        self._fire("commit.post_rename", cid=None, generation=None)
        self._write_mark_mirror()

    def _write_del_mirror(self, cid: int, item_count: int, tombstones):
        bitmap = bytearray((item_count + 7) // 8)
        for i in tombstones:
            bitmap[i // 8] |= 1 << (i % 8)
        _atomic_write(os.path.join(self.root, f"c{cid}.del"), bytes(bitmap))

    def _write_mark_mirror(self):
        _atomic_write(os.path.join(self.root, "journal.mark"),
                      _U64.pack(self.watermark))

    # -- freeze --

    def freeze(self, cid: int, lo: int | None = None,
               hi: int | None = None) -> FreezeToken:
        with self.lock:
            c = self._container(cid)
            if lo is None and hi is None:
                lo, hi = 0, c.item_count
            if not 0 <= lo < hi <= c.item_count:
                raise RangeOutOfBounds(f"freeze range [{lo}, {hi}) invalid for "
                                       f"{c.item_count} items", container=cid)
            c.ensure_loaded()
            token = FreezeToken(self._next_token, cid, lo, hi, c.generation)
            self._next_token += 1
            self._tokens[token.token_id] = token
            self._frozen_view[token.token_id] = [
                (i, c.items[i]) for i in range(lo, hi) if i not in c.tombstones]
            return token

    def unfreeze(self, token: FreezeToken) -> None:
        with self.lock:
            tid = token.token_id if isinstance(token, FreezeToken) else token
            if tid not in self._tokens:
                raise NoSuchToken(f"token {tid} not active")
            del self._tokens[tid]
            del self._frozen_view[tid]

    def token(self, token_id: int) -> FreezeToken:
        with self.lock:
            tok = self._tokens.get(token_id)
            if tok is None:
                raise NoSuchToken(f"token {token_id} not active")
            return tok

    def token_items(self, token_id: int) -> list[tuple[int, tuple]]:
        """The frozen range exactly as it was at freeze time."""
        with self.lock:
            if token_id not in self._tokens:
                raise NoSuchToken(f"token {token_id} not active")
            return list(self._frozen_view[token_id])

    # -- request seqs --

    def next_seq(self) -> int:
        with self.lock:
            if self._seq >= self._seq_limit:
                self._seq_limit += SEQ_RESERVE
                self._write_superblock(self.next_container_id, self._seq_limit)
            seq = self._seq
            self._seq += 1
            return seq

    # -- delayed-request journal --

    def journal_append(self, seq: int, request: bytes) -> None:
        with self.lock:
            body = _U64.pack(seq) + request
            record = _U32.pack(len(body)) + body + _U32.pack(zlib.crc32(body))
            self._fire("journal.pre_append", seq=seq)
            end = os.lseek(self._journal_fd, 0, os.SEEK_END)
            os.pwrite(self._journal_fd, record, end)
            self._journal_records.append((seq, request))
            self._fire("journal.post_append", seq=seq)

    def journal_pending(self) -> list[tuple[int, bytes]]:
        with self.lock:
            return [(seq, req) for seq, req in self._journal_records
                    if seq > self.watermark]

    def _load_journal(self):
        path = os.path.join(self.root, "journal.ndp")
        if not os.path.exists(path):
            return
        raw = open(path, "rb").read()
        pos = 0
        valid_end = 0
        while pos + 4 <= len(raw):
            (blen,) = _U32.unpack_from(raw, pos)
            if pos + 4 + blen + 4 > len(raw) or blen < 8:
                break
            body = raw[pos + 4:pos + 4 + blen]
            (crc,) = _U32.unpack_from(raw, pos + 4 + blen)
            if zlib.crc32(body) != crc:
                break
            (seq,) = _U64.unpack_from(body, 0)
            self._journal_records.append((seq, body[8:]))
            pos += 4 + blen + 4
            valid_end = pos
        if valid_end < len(raw):
            # torn tail from a crashed append was never acknowledged; drop it
            with open(path, "r+b") as f:
                f.truncate(valid_end)

    # -- trigger registry --

    def add_trigger(self, container_id: int, event: int, pred: bytes,
                    action: bytes, enabled: bool = True) -> int:
        with self.lock:
            self._container(container_id)
            tid = max(self.triggers, default=0) + 1
            self.triggers[tid] = TriggerRec(tid, container_id, event, enabled,
                                            pred, action)
            self._write_triggers()
            return tid

    def remove_trigger(self, trigger_id: int) -> None:
        with self.lock:
            if trigger_id not in self.triggers:
                raise NoSuchTrigger(f"no trigger {trigger_id}")
            del self.triggers[trigger_id]
            self._write_triggers()

    def _write_triggers(self):
        parts = []
        for t in self.triggers.values():
            body = (_U64.pack(t.trigger_id) + _U64.pack(t.container_id)
                    + bytes([t.event, 1 if t.enabled else 0])
                    + _U32.pack(len(t.pred)) + t.pred
                    + _U32.pack(len(t.action)) + t.action)
            parts.append(_U32.pack(len(body)) + body + _U32.pack(zlib.crc32(body)))
        _atomic_write(os.path.join(self.root, "triggers.ndp"), b"".join(parts))

    def _load_triggers(self):
        path = os.path.join(self.root, "triggers.ndp")
        if not os.path.exists(path):
            return
        raw = open(path, "rb").read()
        pos = 0
        while pos + 4 <= len(raw):
            (blen,) = _U32.unpack_from(raw, pos)
            if pos + 4 + blen + 4 > len(raw):
                raise CorruptCatalog("trigger registry truncated")
            body = raw[pos + 4:pos + 4 + blen]
            (crc,) = _U32.unpack_from(raw, pos + 4 + blen)
            if zlib.crc32(body) != crc:
                raise CorruptCatalog("trigger registry checksum mismatch")
            tid = _U64.unpack_from(body, 0)[0]
            cid = _U64.unpack_from(body, 8)[0]
            event, enabled = body[16], body[17]
            plen = _U32.unpack_from(body, 18)[0]
            pred = body[22:22 + plen]
            alen = _U32.unpack_from(body, 22 + plen)[0]
            action = body[26 + plen:26 + plen + alen]
            self.triggers[tid] = TriggerRec(tid, cid, event, bool(enabled),
                                            pred, action)
            pos += 4 + blen + 4

    # -- trigger log --

    def read_log(self) -> list[bytes]:
        """Committed trigger-log record bodies, oldest first."""
        with self.lock:
            raw = os.pread(self._log_fd, self.log_end, 0)
            records = []
            pos = 0
            while pos + 4 <= len(raw):
                (rlen,) = _U32.unpack_from(raw, pos)
                body = bytes(raw[pos + 4:pos + 4 + rlen])
                crc_at = pos + 4 + rlen
                if crc_at + 4 > len(raw):
                    raise CorruptCatalog("trigger log shorter than committed "
                                         "length")
                if _U32.unpack_from(raw, crc_at)[0] != zlib.crc32(body):
                    raise CorruptCatalog("trigger log checksum mismatch",
                                         offset=pos)
                records.append(body)
                pos = crc_at + 4
            return records
