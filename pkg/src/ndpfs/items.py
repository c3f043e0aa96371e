"""Typed item schemas and the binary layout of schemas and items.

A container holds a homogeneous sequence of records ("items").  An item is a
plain tuple whose values positionally match an :class:`ItemSchema`.  The byte
layouts defined here are shared verbatim by the on-disk store and the wire
protocol, so they are normative:

item encoding (fields concatenated in schema order, all little-endian):
    U64/I64     8 bytes
    F64         IEEE-754 binary64
    Bool        1 byte, 0x00 or 0x01
    Utf8/Bytes  u32 length prefix, then the raw bytes

schema encoding:
    field count         u16
    per field:          name length u8, name bytes, type tag u8
                        (U64=0x01 I64=0x02 F64=0x03 Bool=0x04 Utf8=0x05 Bytes=0x06),
                        then max_len u32 for Utf8/Bytes

Utf8/Bytes ``max_len`` is a validation bound in bytes, not a padding width;
values always carry their own length prefix.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

from .errors import (
    ArityMismatch,
    BadTypeTag,
    DecodeError,
    DuplicateName,
    InvalidSchema,
    InvalidUtf8,
    LengthExceeded,
    TrailingBytes,
    Truncated,
    TypeMismatch,
)

Item = tuple

MAX_FIELDS = 256
MAX_NAME_BYTES = 64
MAX_LEN_BOUND = 65536

_U64 = struct.Struct("<Q")
_I64 = struct.Struct("<q")
_F64 = struct.Struct("<d")
_U32 = struct.Struct("<I")
_U16 = struct.Struct("<H")

U64_MAX = 2**64 - 1
I64_MIN = -(2**63)
I64_MAX = 2**63 - 1


class Kind(enum.IntEnum):
    """Field type tag; values are the schema-encoding type tags."""

    U64 = 0x01
    I64 = 0x02
    F64 = 0x03
    BOOL = 0x04
    UTF8 = 0x05
    BYTES = 0x06

    @property
    def is_numeric(self) -> bool:
        return self in (Kind.U64, Kind.I64, Kind.F64)

    @property
    def is_variable(self) -> bool:
        return self in (Kind.UTF8, Kind.BYTES)


@dataclass(frozen=True)
class FieldType:
    kind: Kind
    max_len: int | None = None

    def __post_init__(self):
        if self.kind.is_variable:
            if self.max_len is None or not (1 <= self.max_len <= MAX_LEN_BOUND):
                raise InvalidSchema("max_len must be in [1, 65536]", kind=self.kind.name,
                                    max_len=self.max_len)
        elif self.max_len is not None:
            raise InvalidSchema("max_len only applies to Utf8/Bytes", kind=self.kind.name)

    @property
    def fixed_width(self) -> int | None:
        """Encoded width in bytes, or None for variable-size kinds."""
        return {Kind.U64: 8, Kind.I64: 8, Kind.F64: 8, Kind.BOOL: 1}.get(self.kind)


U64 = FieldType(Kind.U64)
I64 = FieldType(Kind.I64)
F64 = FieldType(Kind.F64)
BOOL = FieldType(Kind.BOOL)


def utf8(max_len: int) -> FieldType:
    return FieldType(Kind.UTF8, max_len)


def binary(max_len: int) -> FieldType:
    return FieldType(Kind.BYTES, max_len)


@dataclass(frozen=True)
class ItemSchema:
    """Ordered, immutable field layout; field order is significant."""

    fields: tuple[tuple[str, FieldType], ...]

    def __init__(self, fields: Sequence[tuple[str, FieldType]]):
        object.__setattr__(self, "fields", tuple((n, t) for n, t in fields))
        self._validate()

    def _validate(self):
        if not 1 <= len(self.fields) <= MAX_FIELDS:
            raise InvalidSchema("field count must be in [1, 256]", count=len(self.fields))
        seen = set()
        for name, ftype in self.fields:
            if not name or len(name.encode("ascii", "replace")) > MAX_NAME_BYTES:
                raise InvalidSchema("field name must be 1..64 bytes", name=name)
            try:
                name.encode("ascii")
            except UnicodeEncodeError:
                raise InvalidSchema("field name must be ASCII", name=name) from None
            if name in seen:
                raise InvalidSchema("duplicate field name", name=name)
            seen.add(name)
            if not isinstance(ftype, FieldType):
                raise InvalidSchema("field type must be a FieldType", name=name)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.fields)

    @property
    def types(self) -> tuple[FieldType, ...]:
        return tuple(t for _, t in self.fields)

    def index_of(self, name: str) -> int:
        for i, (n, _) in enumerate(self.fields):
            if n == name:
                return i
        raise KeyError(name)

    def kind_of(self, index: int) -> Kind:
        return self.fields[index][1].kind

    @property
    def fixed_size(self) -> int | None:
        """Constant encoded item size, or None if any field is variable."""
        total = 0
        for _, ftype in self.fields:
            w = ftype.fixed_width
            if w is None:
                return None
            total += w
        return total

    def __len__(self) -> int:
        return len(self.fields)


def validate_item(schema: ItemSchema, item: Sequence) -> None:
    """Raise a ValidationError subclass unless item conforms to schema."""
    if len(item) != len(schema.fields):
        raise ArityMismatch("value count does not match schema",
                            expected=len(schema.fields), got=len(item))
    for (name, ftype), value in zip(schema.fields, item):
        kind = ftype.kind
        if kind is Kind.U64:
            if type(value) is not int:
                raise TypeMismatch("expected u64", field=name)
            if not 0 <= value <= U64_MAX:
                raise TypeMismatch("u64 out of range", field=name)
        elif kind is Kind.I64:
            if type(value) is not int:
                raise TypeMismatch("expected i64", field=name)
            if not I64_MIN <= value <= I64_MAX:
                raise TypeMismatch("i64 out of range", field=name)
        elif kind is Kind.F64:
            if type(value) is not float:
                raise TypeMismatch("expected f64", field=name)
        elif kind is Kind.BOOL:
            if type(value) is not bool:
                raise TypeMismatch("expected bool", field=name)
        elif kind is Kind.UTF8:
            if type(value) is not str:
                raise TypeMismatch("expected utf8 string", field=name)
            try:
                encoded = value.encode("utf-8")
            except UnicodeEncodeError:
                raise InvalidUtf8("string is not encodable as UTF-8", field=name) from None
            if len(encoded) > ftype.max_len:
                raise LengthExceeded("utf8 value too long", field=name,
                                     limit=ftype.max_len, got=len(encoded))
        elif kind is Kind.BYTES:
            if type(value) is not bytes:
                raise TypeMismatch("expected bytes", field=name)
            if len(value) > ftype.max_len:
                raise LengthExceeded("bytes value too long", field=name,
                                     limit=ftype.max_len, got=len(value))


class _Codec:
    """Per-schema encoder/decoder, cached; uses one struct for fixed schemas."""

    def __init__(self, schema: ItemSchema):
        self.schema = schema
        self.fixed_size = schema.fixed_size
        if self.fixed_size is not None:
            fmt = "<" + "".join(
                {Kind.U64: "Q", Kind.I64: "q", Kind.F64: "d", Kind.BOOL: "B"}[t.kind]
                for _, t in schema.fields)
            self.fixed_struct = struct.Struct(fmt)
            self.bool_positions = [i for i, (_, t) in enumerate(schema.fields)
                                   if t.kind is Kind.BOOL]
        else:
            self.fixed_struct = None

    def encode(self, item: Sequence) -> bytes:
        if self.fixed_struct is not None:
            return self.fixed_struct.pack(
                *(int(v) if type(v) is bool else v for v in item))
        parts = []
        for (_, ftype), value in zip(self.schema.fields, item):
            kind = ftype.kind
            if kind is Kind.U64:
                parts.append(_U64.pack(value))
            elif kind is Kind.I64:
                parts.append(_I64.pack(value))
            elif kind is Kind.F64:
                parts.append(_F64.pack(value))
            elif kind is Kind.BOOL:
                parts.append(b"\x01" if value else b"\x00")
            else:
                raw = value.encode("utf-8") if kind is Kind.UTF8 else value
                parts.append(_U32.pack(len(raw)))
                parts.append(raw)
        return b"".join(parts)

    def decode_from(self, buf: bytes, pos: int) -> tuple[Item, int]:
        if self.fixed_struct is not None:
            if pos + self.fixed_size > len(buf):
                raise Truncated("item record truncated")
            raw = self.fixed_struct.unpack_from(buf, pos)
            if self.bool_positions:
                values = list(raw)
                for i in self.bool_positions:
                    b = values[i]
                    if b not in (0, 1):
                        raise DecodeError(f"invalid bool byte 0x{b:02x}")
                    values[i] = bool(b)
                return tuple(values), pos + self.fixed_size
            return raw, pos + self.fixed_size
        values = []
        for name, ftype in self.schema.fields:
            kind = ftype.kind
            if kind in (Kind.U64, Kind.I64, Kind.F64):
                if pos + 8 > len(buf):
                    raise Truncated("item record truncated", field=name)
                st = _U64 if kind is Kind.U64 else _I64 if kind is Kind.I64 else _F64
                values.append(st.unpack_from(buf, pos)[0])
                pos += 8
            elif kind is Kind.BOOL:
                if pos + 1 > len(buf):
                    raise Truncated("item record truncated", field=name)
                b = buf[pos]
                if b not in (0, 1):
                    raise DecodeError(f"invalid bool byte 0x{b:02x}", field=name)
                values.append(bool(b))
                pos += 1
            else:
                if pos + 4 > len(buf):
                    raise Truncated("item record truncated", field=name)
                n = _U32.unpack_from(buf, pos)[0]
                pos += 4
                if n > ftype.max_len:
                    raise LengthExceeded("encoded value exceeds max_len", field=name,
                                         limit=ftype.max_len, got=n)
                if pos + n > len(buf):
                    raise Truncated("item record truncated", field=name)
                raw = bytes(buf[pos:pos + n])
                pos += n
                if kind is Kind.UTF8:
                    try:
                        values.append(raw.decode("utf-8"))
                    except UnicodeDecodeError:
                        raise InvalidUtf8("invalid UTF-8 in encoded value",
                                          field=name) from None
                else:
                    values.append(raw)
        return tuple(values), pos


@lru_cache(maxsize=512)
def _codec(schema: ItemSchema) -> _Codec:
    return _Codec(schema)


def encode_item(schema: ItemSchema, item: Sequence) -> bytes:
    """Encode one validated item to its canonical byte form."""
    validate_item(schema, item)
    return _codec(schema).encode(item)


def decode_item(schema: ItemSchema, data: bytes) -> Item:
    """Inverse of encode_item; rejects surplus bytes."""
    item, pos = _codec(schema).decode_from(data, 0)
    if pos != len(data):
        raise TrailingBytes("unconsumed bytes after item", extra=len(data) - pos)
    return item


def decode_item_from(schema: ItemSchema, buf: bytes, pos: int = 0) -> tuple[Item, int]:
    """Decode one item starting at pos; returns (item, end position)."""
    return _codec(schema).decode_from(buf, pos)


def encoded_item_size(schema: ItemSchema, item: Sequence) -> int:
    fixed = schema.fixed_size
    if fixed is not None:
        return fixed
    total = 0
    for (_, ftype), value in zip(schema.fields, item):
        w = ftype.fixed_width
        if w is not None:
            total += w
        elif ftype.kind is Kind.UTF8:
            total += 4 + len(value.encode("utf-8"))
        else:
            total += 4 + len(value)
    return total


def encode_schema(schema: ItemSchema) -> bytes:
    parts = [_U16.pack(len(schema.fields))]
    for name, ftype in schema.fields:
        raw = name.encode("ascii")
        parts.append(bytes([len(raw)]))
        parts.append(raw)
        parts.append(bytes([ftype.kind.value]))
        if ftype.kind.is_variable:
            parts.append(_U32.pack(ftype.max_len))
    return b"".join(parts)


def decode_schema(data: bytes) -> ItemSchema:
    schema, pos = decode_schema_from(data, 0)
    if pos != len(data):
        raise TrailingBytes("unconsumed bytes after schema", extra=len(data) - pos)
    return schema


def decode_schema_from(data: bytes, pos: int = 0) -> tuple[ItemSchema, int]:
    if pos + 2 > len(data):
        raise Truncated("schema truncated")
    count = _U16.unpack_from(data, pos)[0]
    pos += 2
    fields = []
    names = set()
    for _ in range(count):
        if pos + 1 > len(data):
            raise Truncated("schema truncated")
        name_len = data[pos]
        pos += 1
        if pos + name_len + 1 > len(data):
            raise Truncated("schema truncated")
        name = data[pos:pos + name_len].decode("ascii", "replace")
        pos += name_len
        if name in names:
            raise DuplicateName("duplicate field name", name=name)
        names.add(name)
        tag = data[pos]
        pos += 1
        try:
            kind = Kind(tag)
        except ValueError:
            raise BadTypeTag(f"unknown type tag 0x{tag:02x}") from None
        max_len = None
        if kind.is_variable:
            if pos + 4 > len(data):
                raise Truncated("schema truncated")
            max_len = _U32.unpack_from(data, pos)[0]
            pos += 4
        fields.append((name, FieldType(kind, max_len)))
    return ItemSchema(fields), pos
