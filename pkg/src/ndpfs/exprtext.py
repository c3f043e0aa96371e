"""Textual surface for predicates, mutations, programs and schemas.

Grammar, loosest binding first:

    expr      = and_expr { "||" and_expr }
    and_expr  = cmp_expr { "&&" cmp_expr }
    cmp_expr  = add_expr [ ("==" | "!=" | "<" | "<=" | ">" | ">=") add_expr ]
    add_expr  = mul_expr { ("+" | "-") mul_expr }
    mul_expr  = unary { ("*" | "/") unary }
    unary     = "!" unary | "-" NUMBER | primary
    primary   = "(" expr ")" | NUMBER | STRING | "true" | "false" | field

    mutation  = field ":=" expr { "," field ":=" expr }
    program   = "count()" | "sum(f)" | "min(f)" | "max(f)"
              | "sortby(f, asc|desc)"
    schema    = name ":" type { "," name ":" type }
                with type one of u64 i64 f64 bool utf8(N) bytes(N)

Integer literals are flexibly typed: they adopt the kind of the field they
are combined with (so `temp > 20` compares as f64 against an f64 field).
All parse errors carry a caret position into the source text; the returned
trees are already typechecked against the schema.
"""

from __future__ import annotations

import re

from . import exprs
from .errors import ExprParseError
from .exprs import (
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
)
from .items import (
    BOOL,
    F64,
    I64,
    U64,
    FieldType,
    ItemSchema,
    Kind,
    binary,
    utf8,
)

_U64_MAX = 2**64 - 1
_I64_MIN, _I64_MAX = -(2**63), 2**63 - 1

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
  | (?P<str>"(?:[^"\\\n]|\\.)*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>:=|==|!=|<=|>=|\|\||&&|[-+*/!<>(),])
""", re.VERBOSE)

_ESCAPES = {'"': '"', "\\": "\\", "n": "\n", "t": "\t", "r": "\r"}


class _Tok:
    __slots__ = ("kind", "text", "pos")

    def __init__(self, kind: str, text: str, pos: int):
        self.kind = kind      # "num" | "str" | "ident" | "op" | "end"
        self.text = text
        self.pos = pos


def _tokenize(text: str) -> list[_Tok]:
    out = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExprParseError(f"stray character {text[pos]!r}", text, pos)
        if m.lastgroup != "ws":
            out.append(_Tok(m.lastgroup, m.group(), pos))
        pos = m.end()
    out.append(_Tok("end", "", len(text)))
    return out


def _unquote(tok: _Tok, text: str) -> str:
    body = tok.text[1:-1]
    out = []
    i = 0
    while i < len(body):
        ch = body[i]
        if ch == "\\":
            esc = body[i + 1] if i + 1 < len(body) else ""
            if esc not in _ESCAPES:
                raise ExprParseError(f"unknown escape \\{esc}", text,
                                     tok.pos + 1 + i)
            out.append(_ESCAPES[esc])
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


# Raw parse nodes: literals stay untyped until they meet a field; see _bind.

class _RNum:
    __slots__ = ("value", "is_float", "pos")

    def __init__(self, value, is_float: bool, pos: int):
        self.value = value
        self.is_float = is_float
        self.pos = pos


class _RLit:
    __slots__ = ("kind", "value", "pos")

    def __init__(self, kind: Kind, value, pos: int):
        self.kind = kind
        self.value = value
        self.pos = pos


class _RField:
    __slots__ = ("name", "pos")

    def __init__(self, name: str, pos: int):
        self.name = name
        self.pos = pos


class _RNode:
    __slots__ = ("ctor", "op", "args", "pos")

    def __init__(self, ctor, op, args, pos: int):
        self.ctor = ctor      # Compare | Logic | Arith | Not
        self.op = op
        self.args = args
        self.pos = pos


_CMP_OPS = {"==": CmpOp.EQ, "!=": CmpOp.NE, "<": CmpOp.LT,
            "<=": CmpOp.LE, ">": CmpOp.GT, ">=": CmpOp.GE}
_ADD_OPS = {"+": ArithOp.ADD, "-": ArithOp.SUB}
_MUL_OPS = {"*": ArithOp.MUL, "/": ArithOp.DIV}


class _Parser:
    def __init__(self, text: str, schema: ItemSchema):
        self.text = text
        self.schema = schema
        self.toks = _tokenize(text)
        self.i = 0

    # -- token plumbing -----------------------------------------------------

    @property
    def cur(self) -> _Tok:
        return self.toks[self.i]

    def advance(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def fail(self, message: str, tok: _Tok | None = None):
        tok = tok or self.cur
        raise ExprParseError(message, self.text, tok.pos)

    def eat_op(self, op: str) -> _Tok:
        if self.cur.kind != "op" or self.cur.text != op:
            self.fail(f"expected {op!r}")
        return self.advance()

    def at_op(self, *ops: str) -> bool:
        return self.cur.kind == "op" and self.cur.text in ops

    def expect_end(self) -> None:
        if self.cur.kind != "end":
            self.fail(f"unexpected {self.cur.text!r}")

    def field_index(self, name: str, pos: int) -> int:
        try:
            return self.schema.index_of(name)
        except KeyError:
            raise ExprParseError(f"unknown field {name!r}", self.text,
                                 pos) from None

    # -- expression grammar -------------------------------------------------

    def expr(self):
        node = self.and_expr()
        while self.at_op("||"):
            pos = self.advance().pos
            node = _RNode(Logic, LogicOp.OR, [node, self.and_expr()], pos)
        return node

    def and_expr(self):
        node = self.cmp_expr()
        while self.at_op("&&"):
            pos = self.advance().pos
            node = _RNode(Logic, LogicOp.AND, [node, self.cmp_expr()], pos)
        return node

    def cmp_expr(self):
        node = self.add_expr()
        if self.cur.kind == "op" and self.cur.text in _CMP_OPS:
            tok = self.advance()
            node = _RNode(Compare, _CMP_OPS[tok.text],
                          [node, self.add_expr()], tok.pos)
            if self.cur.kind == "op" and self.cur.text in _CMP_OPS:
                self.fail("comparisons do not chain")
        return node

    def add_expr(self):
        node = self.mul_expr()
        while self.cur.kind == "op" and self.cur.text in _ADD_OPS:
            tok = self.advance()
            node = _RNode(Arith, _ADD_OPS[tok.text],
                          [node, self.mul_expr()], tok.pos)
        return node

    def mul_expr(self):
        node = self.unary()
        while self.cur.kind == "op" and self.cur.text in _MUL_OPS:
            tok = self.advance()
            node = _RNode(Arith, _MUL_OPS[tok.text],
                          [node, self.unary()], tok.pos)
        return node

    def unary(self):
        if self.at_op("!"):
            pos = self.advance().pos
            return _RNode(Not, None, [self.unary()], pos)
        if self.at_op("-"):
            tok = self.advance()
            num = self.cur
            if num.kind != "num":
                self.fail("expected a number after unary -", num)
            self.advance()
            node = self.number(num)
            node.value = -node.value
            node.pos = tok.pos
            return node
        return self.primary()

    def primary(self):
        tok = self.cur
        if self.at_op("("):
            self.advance()
            node = self.expr()
            self.eat_op(")")
            return node
        if tok.kind == "num":
            self.advance()
            return self.number(tok)
        if tok.kind == "str":
            self.advance()
            return _RLit(Kind.UTF8, _unquote(tok, self.text), tok.pos)
        if tok.kind == "ident":
            self.advance()
            if tok.text in ("true", "false"):
                return _RLit(Kind.BOOL, tok.text == "true", tok.pos)
            return _RField(tok.text, tok.pos)
        self.fail("expected an expression")

    def number(self, tok: _Tok) -> _RNum:
        is_float = "." in tok.text or "e" in tok.text or "E" in tok.text
        value = float(tok.text) if is_float else int(tok.text)
        return _RNum(value, is_float, tok.pos)

    # -- binding: give flexible literals the kind of their context ----------

    def static_kind(self, raw) -> Kind | None:
        if isinstance(raw, _RField):
            return self.schema.kind_of(self.field_index(raw.name, raw.pos))
        if isinstance(raw, _RLit):
            return raw.kind
        if isinstance(raw, _RNum):
            return Kind.F64 if raw.is_float else None
        if raw.ctor in (Compare, Logic, Not):
            return Kind.BOOL
        for arg in raw.args:
            kind = self.static_kind(arg)
            if kind is not None:
                return kind
        return None

    def bind(self, raw, want: Kind | None):
        if isinstance(raw, _RField):
            return FieldRef(self.field_index(raw.name, raw.pos))
        if isinstance(raw, _RLit):
            return Lit(raw.kind, raw.value)
        if isinstance(raw, _RNum):
            return self.bind_number(raw, want)
        if raw.ctor is Not:
            return Not(self.bind(raw.args[0], Kind.BOOL))
        if raw.ctor is Logic:
            return Logic(raw.op, self.bind(raw.args[0], Kind.BOOL),
                         self.bind(raw.args[1], Kind.BOOL))
        # Compare and Arith: operands share one kind, fields win over
        # flexible number literals
        lhs, rhs = raw.args
        inner = self.static_kind(lhs)
        if inner is None:
            inner = self.static_kind(rhs)
        if raw.ctor is Compare:
            return Compare(raw.op, self.bind(lhs, inner),
                           self.bind(rhs, inner))
        return Arith(raw.op, self.bind(lhs, inner if want is None else want),
                     self.bind(rhs, inner if want is None else want))

    def bind_number(self, raw: _RNum, want: Kind | None) -> Lit:
        if raw.is_float or want is Kind.F64:
            return Lit(Kind.F64, float(raw.value))
        if want is Kind.U64:
            if not 0 <= raw.value <= _U64_MAX:
                self.fail(f"{raw.value} does not fit u64", raw)
            return Lit(Kind.U64, raw.value)
        if want in (Kind.I64, None):
            if not _I64_MIN <= raw.value <= _I64_MAX:
                self.fail(f"{raw.value} does not fit i64", raw)
            return Lit(Kind.I64, raw.value)
        self.fail(f"number cannot be {want.name.lower()}", raw)


def parse_predicate(text: str, schema: ItemSchema):
    """Text to a typechecked boolean filter tree."""
    parser = _Parser(text, schema)
    raw = parser.expr()
    parser.expect_end()
    node = parser.bind(raw, Kind.BOOL)
    exprs.typecheck_predicate(schema, node)
    return node


def parse_mutation(text: str, schema: ItemSchema) -> Mutation:
    """Text like `temp := temp + 1.0, alert := true` to a typechecked
    mutation."""
    parser = _Parser(text, schema)
    assignments = []
    while True:
        tok = parser.cur
        if tok.kind != "ident":
            parser.fail("expected a field name")
        parser.advance()
        idx = parser.field_index(tok.text, tok.pos)
        parser.eat_op(":=")
        raw = parser.expr()
        assignments.append((idx, parser.bind(raw, schema.kind_of(idx))))
        if not parser.at_op(","):
            break
        parser.advance()
    parser.expect_end()
    node = Mutation(tuple(assignments))
    exprs.typecheck_mutation(schema, node)
    return node


_PROGRAMS = {"count": Count, "sum": Sum, "min": Min, "max": Max,
             "sortby": SortBy}


def parse_program(text: str, schema: ItemSchema):
    """Text like `sum(temp)` or `sortby(temp, desc)` to a typechecked
    program."""
    parser = _Parser(text, schema)
    tok = parser.cur
    if tok.kind != "ident" or tok.text not in _PROGRAMS:
        parser.fail("expected count, sum, min, max or sortby")
    parser.advance()
    parser.eat_op("(")
    if tok.text == "count":
        node = Count()
    else:
        field_tok = parser.cur
        if field_tok.kind != "ident":
            parser.fail("expected a field name")
        parser.advance()
        idx = parser.field_index(field_tok.text, field_tok.pos)
        if tok.text == "sortby":
            parser.eat_op(",")
            order = parser.cur
            if order.kind != "ident" or order.text not in ("asc", "desc"):
                parser.fail("expected asc or desc")
            parser.advance()
            node = SortBy(idx, descending=order.text == "desc")
        else:
            node = _PROGRAMS[tok.text](idx)
    parser.eat_op(")")
    parser.expect_end()
    exprs.typecheck_program(schema, node)
    return node


_SCHEMA_RE = re.compile(
    r"\s*(?P<name>[A-Za-z_][A-Za-z0-9_]*)\s*:\s*"
    r"(?P<type>u64|i64|f64|bool|utf8|bytes)\s*"
    r"(?:\(\s*(?P<len>\d+)\s*\))?\s*")

_FIXED_TYPES = {"u64": U64, "i64": I64, "f64": F64, "bool": BOOL}
_SIZED_TYPES = {"utf8": utf8, "bytes": binary}


def parse_schema_spec(text: str) -> ItemSchema:
    """Comma-separated `name:type` pairs to a schema, e.g.
    `city:utf8(16),temp:f64,alert:bool`."""
    fields: list[tuple[str, FieldType]] = []
    pos = 0
    while True:
        m = _SCHEMA_RE.match(text, pos)
        if m is None:
            raise ExprParseError("expected name:type", text, pos)
        name, type_name, length = m.group("name", "type", "len")
        if type_name in _FIXED_TYPES:
            if length is not None:
                raise ExprParseError(f"{type_name} takes no length", text,
                                     m.start("len"))
            fields.append((name, _FIXED_TYPES[type_name]))
        else:
            if length is None:
                raise ExprParseError(f"{type_name} needs a length", text,
                                     m.start("type"))
            fields.append((name, _SIZED_TYPES[type_name](int(length))))
        pos = m.end()
        if pos >= len(text):
            break
        if text[pos] != ",":
            raise ExprParseError("expected ','", text, pos)
        pos += 1
    return ItemSchema(fields)
