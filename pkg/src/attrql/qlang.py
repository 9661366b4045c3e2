"""SQL-like query language over the attribution operators.

Grammar (EBNF):

    query   = "select" ( "*" | INT ) "from" IDENT "(" IDENT ")"
              [ "where" window ] [ ( "join" | "left" "join" ) "(" query ")" ] ;
    window  = IDENT | "rect" "(" INT "," INT "," INT "," INT ")" ;
    IDENT   = letter-or-underscore { letter, digit, underscore or "'" } ;

"select *" asks for the identity attribution, "select l" for stage l,
"where" restricts to a window, "join" combines two maps, and "left join"
contrasts two branches (anti-join). Sub-queries nest in parentheses.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Union

from .algebra import AlgebraExpr, AntiJoin, Identity, Join, Project, Registry, Select
from .attribution import Window

KEYWORDS = {"select": "SELECT", "from": "FROM", "where": "WHERE", "join": "JOIN", "left": "LEFT"}

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_']*")
_INT_RE = re.compile(r"[0-9]+")


class LexError(ValueError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} at offset {offset}")


class ParseError(ValueError):
    def __init__(self, message: str, offset: int, expected: tuple[str, ...] = ()):
        self.offset = offset
        self.expected = expected
        suffix = f" (expected {', '.join(expected)})" if expected else ""
        super().__init__(f"{message} at offset {offset}{suffix}")


class BindingError(ValueError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (at offset {offset})")


@dataclass(frozen=True)
class Token:
    kind: str
    lexeme: str
    offset: int


def tokenize(text: str) -> list[Token]:
    """Full token stream, or LexError carrying the offending offset."""
    tokens: list[Token] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch == "*":
            tokens.append(Token("STAR", "*", i))
            i += 1
        elif ch == "(":
            tokens.append(Token("LPAREN", "(", i))
            i += 1
        elif ch == ")":
            tokens.append(Token("RPAREN", ")", i))
            i += 1
        elif ch == ",":
            tokens.append(Token("COMMA", ",", i))
            i += 1
        elif ch.isdigit():
            m = _INT_RE.match(text, i)
            tokens.append(Token("INT", m.group(), i))
            i = m.end()
        elif _IDENT_RE.match(text, i):
            m = _IDENT_RE.match(text, i)
            word = m.group()
            kind = KEYWORDS.get(word.lower(), "IDENT")
            tokens.append(Token(kind, word, i))
            i = m.end()
        else:
            raise LexError(f"unexpected character {ch!r}", i)
    return tokens


# ---------------------------------------------------------------------------
# AST. Offsets ride along for error reporting but never affect equality, so
# printing and re-parsing a query yields an equal tree.


@dataclass(frozen=True)
class Star:
    pass


@dataclass(frozen=True)
class Layer:
    index: int


@dataclass(frozen=True)
class NameWindow:
    name: str
    offset: int = field(default=0, compare=False)


@dataclass(frozen=True)
class RectWindow:
    r0: int
    c0: int
    r1: int
    c1: int
    offset: int = field(default=0, compare=False)


WindowTerm = Union[NameWindow, RectWindow]


@dataclass(frozen=True)
class JoinClause:
    kind: str  # "join" | "left_join"
    sub: "QueryAst"


@dataclass(frozen=True)
class QueryAst:
    target: Union[Star, Layer]
    model: str
    input: str
    where: Optional[WindowTerm] = None
    join: Optional[JoinClause] = None
    model_offset: int = field(default=0, compare=False)
    input_offset: int = field(default=0, compare=False)


class _Parser:
    def __init__(self, tokens: list[Token], text_len: int):
        self.tokens = tokens
        self.pos = 0
        self.text_len = text_len

    def _peek(self) -> Optional[Token]:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def _offset(self) -> int:
        tok = self._peek()
        return tok.offset if tok is not None else self.text_len

    def _expect(self, *kinds: str) -> Token:
        tok = self._peek()
        if tok is None or tok.kind not in kinds:
            got = f"{tok.kind} {tok.lexeme!r}" if tok else "end of query"
            raise ParseError(f"unexpected {got}", self._offset(), expected=kinds)
        self.pos += 1
        return tok

    def parse_query(self) -> QueryAst:
        self._expect("SELECT")
        tok = self._expect("STAR", "INT")
        if tok.kind == "STAR":
            target: Union[Star, Layer] = Star()
        else:
            index = int(tok.lexeme)
            if index < 1:
                raise ParseError("layer index must be a positive integer", tok.offset)
            target = Layer(index)
        self._expect("FROM")
        model = self._expect("IDENT")
        self._expect("LPAREN")
        inp = self._expect("IDENT")
        self._expect("RPAREN")
        where: Optional[WindowTerm] = None
        if self._peek() is not None and self._peek().kind == "WHERE":
            self.pos += 1
            where = self._parse_window()
        join: Optional[JoinClause] = None
        tok = self._peek()
        if tok is not None and tok.kind in ("JOIN", "LEFT"):
            if tok.kind == "LEFT":
                self.pos += 1
                self._expect("JOIN")
                kind = "left_join"
            else:
                self.pos += 1
                kind = "join"
            self._expect("LPAREN")
            sub = self.parse_query()
            self._expect("RPAREN")
            join = JoinClause(kind, sub)
        return QueryAst(
            target,
            model.lexeme,
            inp.lexeme,
            where,
            join,
            model_offset=model.offset,
            input_offset=inp.offset,
        )

    def _parse_window(self) -> WindowTerm:
        name = self._expect("IDENT")
        nxt = self._peek()
        if name.lexeme == "rect" and nxt is not None and nxt.kind == "LPAREN":
            self._expect("LPAREN")
            nums = [int(self._expect("INT").lexeme)]
            for _ in range(3):
                self._expect("COMMA")
                nums.append(int(self._expect("INT").lexeme))
            self._expect("RPAREN")
            r0, c0, r1, c1 = nums
            if r0 > r1 or c0 > c1:
                raise ParseError(
                    f"empty rectangle rect({r0},{c0},{r1},{c1}): need r0 <= r1 and c0 <= c1",
                    name.offset,
                )
            return RectWindow(r0, c0, r1, c1, offset=name.offset)
        return NameWindow(name.lexeme, offset=name.offset)

    def finish(self) -> None:
        tok = self._peek()
        if tok is not None:
            raise ParseError(f"trailing input {tok.lexeme!r}", tok.offset)


def parse(tokens: list[Token], text_len: int | None = None) -> QueryAst:
    if text_len is None:
        text_len = tokens[-1].offset + len(tokens[-1].lexeme) if tokens else 0
    p = _Parser(tokens, text_len)
    ast = p.parse_query()
    p.finish()
    return ast


def parse_text(text: str) -> QueryAst:
    return parse(tokenize(text), len(text))


def print_query(ast: QueryAst) -> str:
    """Canonical text: lowercase keywords, single spacing. Parsing the output
    reproduces the tree."""
    target = "*" if isinstance(ast.target, Star) else str(ast.target.index)
    parts = [f"select {target} from {ast.model}({ast.input})"]
    if ast.where is not None:
        if isinstance(ast.where, NameWindow):
            parts.append(f"where {ast.where.name}")
        else:
            w = ast.where
            parts.append(f"where rect({w.r0},{w.c0},{w.r1},{w.c1})")
    if ast.join is not None:
        kw = "left join" if ast.join.kind == "left_join" else "join"
        parts.append(f"{kw} ({print_query(ast.join.sub)})")
    return " ".join(parts)


# ---------------------------------------------------------------------------
# Binding and lowering.


@dataclass
class Bindings:
    """Session-scoped name table. Each identifier is one of: a model ref, an
    input ref, or a concrete window."""

    entries: dict[str, tuple[str, object]] = field(default_factory=dict)

    def bind_model(self, name: str, ref: str) -> None:
        self._bind(name, "model", ref)

    def bind_input(self, name: str, ref: str) -> None:
        self._bind(name, "input", ref)

    def bind_window(self, name: str, window: Window) -> None:
        self._bind(name, "window", window)

    def _bind(self, name: str, kind: str, value) -> None:
        self.entries[name] = (kind, value)

    def lookup(self, name: str) -> Optional[tuple[str, object]]:
        return self.entries.get(name)

    def to_dict(self) -> dict:
        out = {}
        for name, (kind, value) in self.entries.items():
            out[name] = {"kind": kind, "value": value.to_dict() if kind == "window" else value}
        return out


def _resolve(bindings: Bindings, name: str, kind: str, offset: int):
    entry = bindings.lookup(name)
    if entry is None:
        raise BindingError(f"unbound identifier {name!r}: expected a {kind} binding", offset)
    if entry[0] != kind:
        raise BindingError(f"{name!r} is bound to a {entry[0]}, not a {kind}", offset)
    return entry[1]


def lower(ast: QueryAst, bindings: Bindings, registry: Registry | None = None) -> AlgebraExpr:
    """Build the operator tree for a parsed query. Inline rect windows are
    materialized against the bound input's shape, which needs the registry."""
    model_ref = _resolve(bindings, ast.model, "model", ast.model_offset)
    input_ref = _resolve(bindings, ast.input, "input", ast.input_offset)
    expr: AlgebraExpr = Identity(model_ref, input_ref)
    if isinstance(ast.target, Layer):
        expr = Select(expr, ast.target.index)
    if ast.where is not None:
        if isinstance(ast.where, NameWindow):
            window = _resolve(bindings, ast.where.name, "window", ast.where.offset)
        else:
            if registry is None or input_ref not in registry.inputs:
                raise BindingError(
                    "rect window needs the bound input's shape; register the input first",
                    ast.where.offset,
                )
            shape = registry.inputs[input_ref].shape
            w = ast.where
            window = Window.from_rect(shape, w.r0, w.c0, w.r1, w.c1)
        expr = Project(expr, window)
    if ast.join is not None:
        sub = lower(ast.join.sub, bindings, registry)
        expr = Join(expr, sub) if ast.join.kind == "join" else AntiJoin(expr, sub)
    return expr
