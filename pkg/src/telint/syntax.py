"""Tokenizer and statement grammar for type-enforcement sources."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple, Union

from .model import (
    ALLOW,
    NEVERALLOW,
    AVRule,
    NeverallowRule,
    PolicyError,
    Rule,
    TERule,
    TypeSet,
)

IDENT = "ident"
PUNCT = "punct"
STRING = "string"
QUOTED = "quoted"
# Anything else, e.g. paths in genfscon lines; only skipped statements may hold it.
OTHER = "other"

# `$` is accepted so that template placeholders ($1, $ARG0) survive tokenizing.
_IDENT_CHARS = re.compile(r"[A-Za-z0-9_.$][A-Za-z0-9_.$\-]*")
_PUNCT = set("{}:;,()~*-")
_OTHER_CHARS = re.compile(r"[^\s{}:;,()~*#`'\"]+|.")


@dataclass(frozen=True)
class Token:
    kind: str
    value: str
    line: int
    start: int
    end: int

    def __repr__(self) -> str:
        return f"<{self.kind} {self.value!r} @{self.line}>"


class SyntaxErrorAt(PolicyError):
    pass


def tokenize(text: str, *, first_line: int = 1, path: str = "<input>") -> List[Token]:
    tokens: List[Token] = []
    line = first_line
    pos = 0
    size = len(text)
    while pos < size:
        ch = text[pos]
        if ch == "\n":
            line += 1
            pos += 1
        elif ch.isspace():
            pos += 1
        elif ch == "#":
            end = text.find("\n", pos)
            pos = size if end < 0 else end
        elif ch == '"':
            end = text.find('"', pos + 1)
            if end < 0 or "\n" in text[pos:end]:
                raise SyntaxErrorAt(f"{path}:{line}: unterminated string")
            tokens.append(Token(STRING, text[pos + 1 : end], line, pos, end + 1))
            pos = end + 1
        elif ch == "`":
            start, start_line, depth = pos, line, 0
            while pos < size:
                c = text[pos]
                if c == "`":
                    depth += 1
                elif c == "'":
                    depth -= 1
                    if depth == 0:
                        break
                elif c == "\n":
                    line += 1
                pos += 1
            if pos >= size:
                raise SyntaxErrorAt(f"{path}:{start_line}: unbalanced quote")
            tokens.append(Token(QUOTED, text[start + 1 : pos], start_line, start, pos + 1))
            pos += 1
        elif ch in _PUNCT:
            tokens.append(Token(PUNCT, ch, line, pos, pos + 1))
            pos += 1
        else:
            match = _IDENT_CHARS.match(text, pos)
            if match is None:
                match = _OTHER_CHARS.match(text, pos)
                tokens.append(Token(OTHER, match.group(), line, pos, match.end()))
                pos = match.end()
                continue
            tokens.append(Token(IDENT, match.group(), line, pos, match.end()))
            pos = match.end()
    return tokens


def split_statements(tokens: Sequence[Token]) -> Iterator[List[Token]]:
    """Yield `;`-terminated statements (terminator excluded)."""
    current: List[Token] = []
    depth = 0
    for tok in tokens:
        if tok.kind == PUNCT:
            if tok.value == "{":
                depth += 1
            elif tok.value == "}":
                depth -= 1
            elif tok.value == ";" and depth == 0:
                yield current
                current = []
                continue
        current.append(tok)
    if current:
        line = current[0].line
        raise SyntaxErrorAt(f"line {line}: statement not terminated by ';'")


class _Cursor:
    def __init__(self, tokens: Sequence[Token], what: str):
        self.tokens = tokens
        self.pos = 0
        self.what = what

    @property
    def line(self) -> int:
        if self.pos < len(self.tokens):
            return self.tokens[self.pos].line
        return self.tokens[-1].line if self.tokens else 0

    def fail(self, message: str) -> SyntaxErrorAt:
        return SyntaxErrorAt(f"line {self.line}: {message} in {self.what}")

    def peek(self) -> Optional[Token]:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self) -> Token:
        tok = self.peek()
        if tok is None:
            raise self.fail("unexpected end of statement")
        self.pos += 1
        return tok

    def expect(self, value: str) -> None:
        tok = self.next()
        if tok.value != value or tok.kind != PUNCT:
            raise self.fail(f"expected {value!r}, found {tok.value!r}")

    def done(self) -> bool:
        return self.pos >= len(self.tokens)


def _read_names(cur: _Cursor) -> List[str]:
    """A single identifier or a (possibly nested) braced list of identifiers."""
    tok = cur.next()
    if tok.kind == IDENT:
        return [tok.value]
    if tok.kind == PUNCT and tok.value == "{":
        names: List[str] = []
        depth = 1
        while depth:
            tok = cur.next()
            if tok.kind == IDENT:
                names.append(tok.value)
            elif tok.value == "{":
                depth += 1
            elif tok.value == "}":
                depth -= 1
            else:
                raise cur.fail(f"unsupported set operator {tok.value!r}")
        if not names:
            raise cur.fail("empty set")
        return names
    raise cur.fail(f"expected name or set, found {tok.value!r}")


def _read_set_expr(cur: _Cursor) -> TypeSet:
    tok = cur.peek()
    if tok is None:
        raise cur.fail("missing set expression")
    if tok.kind == PUNCT and tok.value == "~":
        cur.next()
        inner = _read_set_expr(cur)
        return TypeSet(inner.names, inner.excluded, not inner.complement, inner.wildcard)
    if tok.kind == PUNCT and tok.value == "*":
        cur.next()
        return TypeSet(wildcard=True)
    if tok.kind == IDENT:
        cur.next()
        return TypeSet(names=frozenset([tok.value]))
    if tok.kind == PUNCT and tok.value == "{":
        cur.next()
        names, excluded, wildcard = set(), set(), False
        while True:
            tok = cur.next()
            if tok.kind == PUNCT and tok.value == "}":
                break
            if tok.kind == PUNCT and tok.value == "-":
                excluded.add(cur.next().value)
            elif tok.kind == PUNCT and tok.value == "*":
                wildcard = True
            elif tok.kind == IDENT:
                names.add(tok.value)
            else:
                raise cur.fail(f"unexpected {tok.value!r} in set")
        if not names and not wildcard:
            if excluded:
                # `{ -a }` is shorthand for everything except a.
                wildcard = True
            else:
                raise cur.fail("empty set")
        return TypeSet(frozenset(names), frozenset(excluded), False, wildcard)
    raise cur.fail(f"unexpected {tok.value!r}")


@dataclass(frozen=True)
class RawAV:
    """An access-vector statement before identifier validation."""

    kind: str
    sources: Tuple[str, ...]
    targets: Tuple[str, ...]
    classes: Tuple[str, ...]
    perms: Tuple[str, ...]


@dataclass(frozen=True)
class RawTE:
    sources: Tuple[str, ...]
    targets: Tuple[str, ...]
    classes: Tuple[str, ...]
    default: str
    name: Optional[str]


def parse_av(tokens: Sequence[Token]) -> RawAV:
    cur = _Cursor(tokens, f"'{tokens[0].value}' statement")
    kind = cur.next().value
    sources = _read_names(cur)
    targets = _read_names(cur)
    cur.expect(":")
    classes = _read_names(cur)
    perms = _read_names(cur)
    if not cur.done():
        raise cur.fail(f"trailing tokens starting at {cur.peek().value!r}")
    return RawAV(kind, tuple(sources), tuple(targets), tuple(classes), tuple(perms))


def parse_te(tokens: Sequence[Token]) -> RawTE:
    cur = _Cursor(tokens, "'type_transition' statement")
    cur.next()
    sources = _read_names(cur)
    targets = _read_names(cur)
    cur.expect(":")
    classes = _read_names(cur)
    default = cur.next()
    if default.kind != IDENT:
        raise cur.fail("expected default type")
    name = None
    if not cur.done():
        tok = cur.next()
        if tok.kind not in (STRING, IDENT):
            raise cur.fail("expected object name")
        name = tok.value
    if not cur.done():
        raise cur.fail("trailing tokens")
    return RawTE(tuple(sources), tuple(targets), tuple(classes), default.value, name)


def parse_neverallow(tokens: Sequence[Token]) -> NeverallowRule:
    cur = _Cursor(tokens, "'neverallow' statement")
    if cur.next().value != NEVERALLOW:
        raise cur.fail("expected 'neverallow'")
    source = _read_set_expr(cur)
    target = _read_set_expr(cur)
    cur.expect(":")
    classes = _read_set_expr(cur)
    perms = _read_set_expr(cur)
    if not cur.done():
        raise cur.fail("trailing tokens")
    return NeverallowRule(source, target, classes, perms)


def is_av_statement(tokens: Sequence[Token]) -> bool:
    """`allow a b:c p` (as opposed to the role form `allow r1 r2`)."""
    return any(t.kind == PUNCT and t.value == ":" for t in tokens)


def concrete_av(raw: RawAV) -> List[AVRule]:
    perms = frozenset(raw.perms)
    return [
        AVRule(raw.kind, s, t, c, perms)
        for s in raw.sources
        for t in raw.targets
        for c in raw.classes
    ]


def concrete_te(raw: RawTE) -> List[TERule]:
    return [
        TERule(s, t, c, raw.default, raw.name)
        for s in raw.sources
        for t in raw.targets
        for c in raw.classes
    ]


def parse_rules(text: str, *, path: str = "<input>") -> List[Rule]:
    """Parse the allow/type_transition statements in `text`, ignoring declarations."""
    rules: List[Rule] = []
    for stmt in split_statements(tokenize(text, path=path)):
        if not stmt:
            continue
        keyword = stmt[0].value
        if keyword == ALLOW and is_av_statement(stmt):
            rules.extend(concrete_av(parse_av(stmt)))
        elif keyword == "type_transition":
            rules.extend(concrete_te(parse_te(stmt)))
    return rules


def parse_rule(text: str) -> Union[Rule, NeverallowRule]:
    """Parse exactly one statement (allow, neverallow or type_transition)."""
    stmts = [s for s in split_statements(tokenize(text)) if s]
    if len(stmts) != 1:
        raise PolicyError(f"expected exactly one statement in {text!r}")
    stmt = stmts[0]
    keyword = stmt[0].value
    if keyword == NEVERALLOW:
        return parse_neverallow(stmt)
    if keyword == ALLOW:
        rules = concrete_av(parse_av(stmt))
    elif keyword == "type_transition":
        rules = concrete_te(parse_te(stmt))
    else:
        raise PolicyError(f"unsupported statement {keyword!r}")
    if len(rules) != 1:
        raise PolicyError(f"statement expands to {len(rules)} rules: {text!r}")
    return rules[0]
