"""Serializable expression language executed next to the data.

Three AST roles ship from host to device:

* predicates  — boolean filters for find/modify/trigger matching
* mutations   — simultaneous field assignments applied to matching items
* programs    — whole-container operations (count/sum/min/max/sort)

ASTs are strictly typed against an :class:`~ndpfs.items.ItemSchema` before
evaluation: comparisons require identical field kinds on both sides (no
numeric coercion), logic nodes take booleans, arithmetic requires matching
numeric kinds.  Integer arithmetic is checked (errors instead of wrapping);
F64 follows IEEE-754, including division by zero and NaN comparison rules
(every comparison with NaN is false except Ne).  Mutations evaluate every
right-hand side against the original item before any assignment lands, so
``{a := b, b := a}`` swaps.

The wire/journal byte form is a preorder TLV; tag table:

    0x01 FieldRef (+u16 index)          0x20 And   0x21 Or   0x22 Not
    0x02..0x06 literals U64/I64/F64/Bool/Utf8 (item scalar encodings)
    0x10..0x15 Eq Ne Lt Le Gt Ge        0x30..0x33 Add Sub Mul Div
    0x40 Count  0x41 Sum  0x42 Min  0x43 Max  (+u16 field)
    0x44 SortBy (+u16 field, +u8 direction 0=asc 1=desc)
    0x50 Mutation (+u16 count, then per assignment u16 field + expr)

Depth is capped at 64 and total node count at 4096.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass
from typing import Union

from .errors import (
    BadTag,
    DepthExceeded,
    DivByZero,
    ExprTypeError,
    InvalidUtf8,
    Overflow,
    TrailingBytes,
    Truncated,
    UnknownField,
)
from .items import I64_MAX, I64_MIN, U64_MAX, ItemSchema, Kind

MAX_DEPTH = 64
MAX_NODES = 4096

_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_I64 = struct.Struct("<q")
_F64 = struct.Struct("<d")


class CmpOp(enum.IntEnum):
    EQ = 0x10
    NE = 0x11
    LT = 0x12
    LE = 0x13
    GT = 0x14
    GE = 0x15


class LogicOp(enum.IntEnum):
    AND = 0x20
    OR = 0x21


class ArithOp(enum.IntEnum):
    ADD = 0x30
    SUB = 0x31
    MUL = 0x32
    DIV = 0x33


@dataclass(frozen=True)
class FieldRef:
    index: int


@dataclass(frozen=True)
class Lit:
    kind: Kind
    value: object

    def __post_init__(self):
        k, v = self.kind, self.value
        if k is Kind.U64 and not (type(v) is int and 0 <= v <= U64_MAX):
            raise ExprTypeError("u64 literal out of range", value=v)
        if k is Kind.I64 and not (type(v) is int and I64_MIN <= v <= I64_MAX):
            raise ExprTypeError("i64 literal out of range", value=v)
        if k is Kind.F64 and type(v) is not float:
            raise ExprTypeError("f64 literal must be float", value=v)
        if k is Kind.BOOL and type(v) is not bool:
            raise ExprTypeError("bool literal must be bool", value=v)
        if k is Kind.UTF8 and type(v) is not str:
            raise ExprTypeError("utf8 literal must be str", value=v)
        if k is Kind.BYTES:
            raise ExprTypeError("bytes literals are not part of the language")


@dataclass(frozen=True)
class Compare:
    op: CmpOp
    lhs: "Expr"
    rhs: "Expr"


@dataclass(frozen=True)
class Logic:
    op: LogicOp
    lhs: "Expr"
    rhs: "Expr"


@dataclass(frozen=True)
class Not:
    child: "Expr"


@dataclass(frozen=True)
class Arith:
    op: ArithOp
    lhs: "Expr"
    rhs: "Expr"


Expr = Union[FieldRef, Lit, Compare, Logic, Not, Arith]


@dataclass(frozen=True)
class Mutation:
    """Ordered (field index, expression) assignments; applied simultaneously."""

    assignments: tuple[tuple[int, Expr], ...]


@dataclass(frozen=True)
class Count:
    pass


@dataclass(frozen=True)
class Sum:
    field: int


@dataclass(frozen=True)
class Min:
    field: int


@dataclass(frozen=True)
class Max:
    field: int


@dataclass(frozen=True)
class SortBy:
    field: int
    descending: bool = False


Program = Union[Count, Sum, Min, Max, SortBy]
Ast = Union[Expr, Mutation, Program]


# --- type checking ---

class _Checker:
    """Walks an expression tree enforcing kind rules and size limits."""

    # node vocabularies per role
    PREDICATE = frozenset({FieldRef, Lit, Compare, Logic, Not})
    MUTATION_EXPR = frozenset({FieldRef, Lit, Arith})

    def __init__(self, schema: ItemSchema, allowed: frozenset):
        self.schema = schema
        self.allowed = allowed
        self.nodes = 0

    def check(self, node: Expr, path: tuple, depth: int) -> Kind:
        if depth > MAX_DEPTH:
            raise DepthExceeded("expression deeper than 64 nodes", path=path)
        self.nodes += 1
        if self.nodes > MAX_NODES:
            raise DepthExceeded("expression larger than 4096 nodes")
        if type(node) not in self.allowed:
            raise ExprTypeError(f"{type(node).__name__} not allowed in this role",
                                path=path)
        match node:
            case FieldRef(index=i):
                if not 0 <= i < len(self.schema):
                    raise UnknownField(f"no field {i} in {len(self.schema)}-field schema",
                                       path=path)
                return self.schema.kind_of(i)
            case Lit(kind=k):
                return k
            case Compare(lhs=lhs, rhs=rhs):
                lk = self.check(lhs, path + ("lhs",), depth + 1)
                rk = self.check(rhs, path + ("rhs",), depth + 1)
                if lk is not rk:
                    raise ExprTypeError("comparison operands must share a kind",
                                        path=path, expected=lk.name, found=rk.name)
                return Kind.BOOL
            case Logic(lhs=lhs, rhs=rhs):
                for child, seg in ((lhs, "lhs"), (rhs, "rhs")):
                    k = self.check(child, path + (seg,), depth + 1)
                    if k is not Kind.BOOL:
                        raise ExprTypeError("logic operand must be boolean",
                                            path=path + (seg,), expected="BOOL",
                                            found=k.name)
                return Kind.BOOL
            case Not(child=child):
                k = self.check(child, path + ("child",), depth + 1)
                if k is not Kind.BOOL:
                    raise ExprTypeError("negation operand must be boolean",
                                        path=path + ("child",), expected="BOOL",
                                        found=k.name)
                return Kind.BOOL
            case Arith(lhs=lhs, rhs=rhs):
                lk = self.check(lhs, path + ("lhs",), depth + 1)
                rk = self.check(rhs, path + ("rhs",), depth + 1)
                if lk is not rk:
                    raise ExprTypeError("arithmetic operands must share a kind",
                                        path=path, expected=lk.name, found=rk.name)
                if not lk.is_numeric:
                    raise ExprTypeError("arithmetic requires a numeric kind",
                                        path=path, found=lk.name)
                return lk
        raise ExprTypeError(f"unknown node {type(node).__name__}", path=path)


def typecheck_predicate(schema: ItemSchema, pred: Expr) -> None:
    checker = _Checker(schema, _Checker.PREDICATE)
    root = checker.check(pred, (), 1)
    if root is not Kind.BOOL:
        raise ExprTypeError("predicate root must be boolean", found=root.name)


def typecheck_mutation(schema: ItemSchema, mut: Mutation) -> None:
    if not isinstance(mut, Mutation) or not mut.assignments:
        raise ExprTypeError("mutation needs at least one assignment")
    checker = _Checker(schema, _Checker.MUTATION_EXPR)
    seen = set()
    for i, (field_index, expr) in enumerate(mut.assignments):
        path = (f"assign[{i}]",)
        if not 0 <= field_index < len(schema):
            raise UnknownField(f"no field {field_index}", path=path)
        if field_index in seen:
            raise ExprTypeError("field assigned more than once", path=path,
                                field=field_index)
        seen.add(field_index)
        k = checker.check(expr, path, 1)
        want = schema.kind_of(field_index)
        if k is not want:
            raise ExprTypeError("assignment kind mismatch", path=path,
                                expected=want.name, found=k.name)


def typecheck_program(schema: ItemSchema, prog: Program) -> None:
    match prog:
        case Count():
            return
        case Sum(field=f) | Min(field=f) | Max(field=f):
            if not 0 <= f < len(schema):
                raise UnknownField(f"no field {f}")
            if not schema.kind_of(f).is_numeric:
                raise ExprTypeError("aggregate field must be numeric",
                                    found=schema.kind_of(f).name)
        case SortBy(field=f):
            if not 0 <= f < len(schema):
                raise UnknownField(f"no field {f}")
            k = schema.kind_of(f)
            if not (k.is_numeric or k is Kind.UTF8):
                raise ExprTypeError("sort key must be numeric or utf8", found=k.name)
        case _:
            raise ExprTypeError(f"not a program: {type(prog).__name__}")


def typecheck(schema: ItemSchema, ast: Ast) -> None:
    """Dispatch to the role-specific checker based on the AST root."""
    if isinstance(ast, Mutation):
        typecheck_mutation(schema, ast)
    elif isinstance(ast, (Count, Sum, Min, Max, SortBy)):
        typecheck_program(schema, ast)
    else:
        typecheck_predicate(schema, ast)


# --- evaluation ---

def _checked_int(kind: Kind, value: int) -> int:
    if kind is Kind.U64:
        if not 0 <= value <= U64_MAX:
            raise Overflow("u64 arithmetic overflow", value=value)
    else:
        if not I64_MIN <= value <= I64_MAX:
            raise Overflow("i64 arithmetic overflow", value=value)
    return value


def _trunc_div(a: int, b: int) -> int:
    # truncating (round toward zero) integer division
    q = a // b
    if q < 0 and q * b != a:
        q += 1
    return q


def _f64_div(a: float, b: float) -> float:
    if b == 0.0:
        if a == 0.0 or math.isnan(a):
            return math.nan
        return math.copysign(1.0, a) * math.copysign(1.0, b) * math.inf
    return a / b


def checked_arith(op: ArithOp, kind: Kind, a, b):
    """Arithmetic under the DSL's rules: checked integers, IEEE floats."""
    if kind is Kind.F64:
        if op is ArithOp.ADD:
            return a + b
        if op is ArithOp.SUB:
            return a - b
        if op is ArithOp.MUL:
            return a * b
        return _f64_div(a, b)
    if op is ArithOp.ADD:
        return _checked_int(kind, a + b)
    if op is ArithOp.SUB:
        return _checked_int(kind, a - b)
    if op is ArithOp.MUL:
        return _checked_int(kind, a * b)
    if b == 0:
        raise DivByZero("integer division by zero")
    return _checked_int(kind, _trunc_div(a, b))


def _compare(op: CmpOp, a, b) -> bool:
    # Python semantics deliver IEEE-754 behaviour for floats, including NaN.
    if op is CmpOp.EQ:
        return a == b
    if op is CmpOp.NE:
        return a != b
    if op is CmpOp.LT:
        return a < b
    if op is CmpOp.LE:
        return a <= b
    if op is CmpOp.GT:
        return a > b
    return a >= b


def eval_expr(schema: ItemSchema, item: tuple, node: Expr):
    match node:
        case FieldRef(index=i):
            return item[i]
        case Lit(value=v):
            return v
        case Compare(op=op, lhs=lhs, rhs=rhs):
            return _compare(op, eval_expr(schema, item, lhs),
                            eval_expr(schema, item, rhs))
        case Logic(op=op, lhs=lhs, rhs=rhs):
            if op is LogicOp.AND:
                return eval_expr(schema, item, lhs) and eval_expr(schema, item, rhs)
            return eval_expr(schema, item, lhs) or eval_expr(schema, item, rhs)
        case Not(child=child):
            return not eval_expr(schema, item, child)
        case Arith(op=op, lhs=lhs, rhs=rhs):
            a = eval_expr(schema, item, lhs)
            b = eval_expr(schema, item, rhs)
            return checked_arith(op, _static_kind(schema, lhs), a, b)
    raise ExprTypeError(f"cannot evaluate {type(node).__name__}")


def _static_kind(schema: ItemSchema, node: Expr) -> Kind:
    """Kind of a typechecked value expression (all leaves agree, so any works)."""
    while isinstance(node, Arith):
        node = node.lhs
    if isinstance(node, FieldRef):
        return schema.kind_of(node.index)
    if isinstance(node, Lit):
        return node.kind
    return Kind.BOOL


def eval_predicate(schema: ItemSchema, item: tuple, pred: Expr) -> bool:
    return bool(eval_expr(schema, item, pred))


def eval_mutation(schema: ItemSchema, item: tuple, mut: Mutation) -> tuple:
    """Apply all assignments against the original item (simultaneous)."""
    computed = [(i, eval_expr(schema, item, expr)) for i, expr in mut.assignments]
    values = list(item)
    for i, v in computed:
        values[i] = v
    return tuple(values)


# --- binary form ---

_LIT_TAG = {Kind.U64: 0x02, Kind.I64: 0x03, Kind.F64: 0x04,
            Kind.BOOL: 0x05, Kind.UTF8: 0x06}
_TAG_LIT = {v: k for k, v in _LIT_TAG.items()}

_TAG_FIELDREF = 0x01
_TAG_NOT = 0x22
_TAG_COUNT = 0x40
_TAG_SUM = 0x41
_TAG_MIN = 0x42
_TAG_MAX = 0x43
_TAG_SORTBY = 0x44
_TAG_MUTATION = 0x50


def encode_ast(ast: Ast) -> bytes:
    parts: list[bytes] = []
    _encode_node(ast, parts)
    return b"".join(parts)


def _encode_node(node: Ast, parts: list[bytes]) -> None:
    match node:
        case FieldRef(index=i):
            parts.append(bytes([_TAG_FIELDREF]))
            parts.append(_U16.pack(i))
        case Lit(kind=k, value=v):
            parts.append(bytes([_LIT_TAG[k]]))
            if k is Kind.U64:
                parts.append(_U64.pack(v))
            elif k is Kind.I64:
                parts.append(_I64.pack(v))
            elif k is Kind.F64:
                parts.append(_F64.pack(v))
            elif k is Kind.BOOL:
                parts.append(b"\x01" if v else b"\x00")
            else:
                raw = v.encode("utf-8")
                parts.append(_U32.pack(len(raw)))
                parts.append(raw)
        case Compare(op=op, lhs=lhs, rhs=rhs) | Logic(op=op, lhs=lhs, rhs=rhs) | \
                Arith(op=op, lhs=lhs, rhs=rhs):
            parts.append(bytes([op.value]))
            _encode_node(lhs, parts)
            _encode_node(rhs, parts)
        case Not(child=child):
            parts.append(bytes([_TAG_NOT]))
            _encode_node(child, parts)
        case Count():
            parts.append(bytes([_TAG_COUNT]))
        case Sum(field=f):
            parts.append(bytes([_TAG_SUM]))
            parts.append(_U16.pack(f))
        case Min(field=f):
            parts.append(bytes([_TAG_MIN]))
            parts.append(_U16.pack(f))
        case Max(field=f):
            parts.append(bytes([_TAG_MAX]))
            parts.append(_U16.pack(f))
        case SortBy(field=f, descending=d):
            parts.append(bytes([_TAG_SORTBY]))
            parts.append(_U16.pack(f))
            parts.append(b"\x01" if d else b"\x00")
        case Mutation(assignments=assigns):
            parts.append(bytes([_TAG_MUTATION]))
            parts.append(_U16.pack(len(assigns)))
            for field_index, expr in assigns:
                parts.append(_U16.pack(field_index))
                _encode_node(expr, parts)
        case _:
            raise BadTag(f"cannot encode {type(node).__name__}")


class _Decoder:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.nodes = 0

    def u8(self) -> int:
        if self.pos + 1 > len(self.data):
            raise Truncated("AST truncated")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def unpack(self, st: struct.Struct):
        if self.pos + st.size > len(self.data):
            raise Truncated("AST truncated")
        v = st.unpack_from(self.data, self.pos)[0]
        self.pos += st.size
        return v

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise Truncated("AST truncated")
        raw = self.data[self.pos:self.pos + n]
        self.pos += n
        return raw

    def node(self, depth: int) -> Ast:
        if depth > MAX_DEPTH:
            raise DepthExceeded("AST deeper than 64 nodes")
        self.nodes += 1
        if self.nodes > MAX_NODES:
            raise DepthExceeded("AST larger than 4096 nodes")
        tag = self.u8()
        if tag == _TAG_FIELDREF:
            return FieldRef(self.unpack(_U16))
        if tag in _TAG_LIT:
            kind = _TAG_LIT[tag]
            if kind is Kind.U64:
                return Lit(kind, self.unpack(_U64))
            if kind is Kind.I64:
                return Lit(kind, self.unpack(_I64))
            if kind is Kind.F64:
                return Lit(kind, self.unpack(_F64))
            if kind is Kind.BOOL:
                b = self.u8()
                if b not in (0, 1):
                    raise BadTag(f"invalid bool literal byte 0x{b:02x}")
                return Lit(kind, bool(b))
            n = self.unpack(_U32)
            raw = self.take(n)
            try:
                return Lit(kind, raw.decode("utf-8"))
            except UnicodeDecodeError:
                raise InvalidUtf8("invalid UTF-8 in literal") from None
        if tag in CmpOp._value2member_map_:
            return Compare(CmpOp(tag), self.node(depth + 1), self.node(depth + 1))
        if tag in LogicOp._value2member_map_:
            return Logic(LogicOp(tag), self.node(depth + 1), self.node(depth + 1))
        if tag == _TAG_NOT:
            return Not(self.node(depth + 1))
        if tag in ArithOp._value2member_map_:
            return Arith(ArithOp(tag), self.node(depth + 1), self.node(depth + 1))
        if tag == _TAG_COUNT:
            return Count()
        if tag == _TAG_SUM:
            return Sum(self.unpack(_U16))
        if tag == _TAG_MIN:
            return Min(self.unpack(_U16))
        if tag == _TAG_MAX:
            return Max(self.unpack(_U16))
        if tag == _TAG_SORTBY:
            f = self.unpack(_U16)
            d = self.u8()
            if d not in (0, 1):
                raise BadTag(f"invalid sort direction 0x{d:02x}")
            return SortBy(f, bool(d))
        if tag == _TAG_MUTATION:
            count = self.unpack(_U16)
            assigns = []
            for _ in range(count):
                field_index = self.unpack(_U16)
                assigns.append((field_index, self.node(depth + 1)))
            return Mutation(tuple(assigns))
        raise BadTag(f"unknown AST tag 0x{tag:02x}")


def decode_ast(data: bytes) -> Ast:
    """Inverse of encode_ast; rejects trailing bytes."""
    dec = _Decoder(data)
    ast = dec.node(1)
    if dec.pos != len(data):
        raise TrailingBytes("unconsumed bytes after AST", extra=len(data) - dec.pos)
    return ast


def sort_key(kind: Kind):
    """Deterministic total-order key for SortBy/Min/Max.

    Floats order NaN after every number (ties broken by input order via
    stable sort); utf8 orders by encoded bytes, which equals code-point
    order.
    """
    if kind is Kind.F64:
        return lambda v: (math.isnan(v), v if not math.isnan(v) else 0.0)
    if kind is Kind.UTF8:
        return lambda v: v.encode("utf-8")
    return lambda v: v
