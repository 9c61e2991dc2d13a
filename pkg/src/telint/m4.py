"""The M4 subset used by policy macro files: `define`, `$1..$9`, nested calls, comments.

Conditionals (`ifelse`, `ifdef`), diversions and quote changes are rejected
rather than skipped, so that rule counts are never silently wrong.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

from .model import PolicyError, Rule, SourceLocation, is_identifier
from .syntax import IDENT, PUNCT, parse_rules, tokenize

log = logging.getLogger(__name__)

PERMISSION_SET = "permission_set"
RULE_BLOCK = "rule_block"

UNSUPPORTED = ("ifelse", "ifdef", "ifndef", "divert", "undivert", "changequote",
               "include", "sinclude", "undefine", "pushdef", "popdef", "eval",
               "incr", "decr", "substr", "translit", "patsubst", "regexp", "esyscmd",
               "syscmd", "shift", "forloop", "foreach")

_PARAM_RE = re.compile(r"\$(\d)")
_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


class MacroError(PolicyError):
    pass


class MacroCycleError(MacroError):
    def __init__(self, cycle: Sequence[str]):
        self.cycle = tuple(cycle)
        super().__init__("cyclic macro reference: " + " -> ".join(cycle))


@dataclass(frozen=True)
class MacroDefinition:
    name: str
    arity: int
    body: str
    origin: SourceLocation
    kind: str

    @property
    def is_permission_set(self) -> bool:
        return self.kind == PERMISSION_SET


@dataclass(frozen=True)
class MacroExpansion:
    definition: MacroDefinition
    args: Tuple[str, ...]
    text: str
    produced_rules: Tuple[Rule, ...] = ()
    produced_permissions: FrozenSet[str] = frozenset()


MacroTable = Mapping[str, MacroDefinition]


def infer_arity(body: str) -> int:
    return max((int(n) for n in _PARAM_RE.findall(body)), default=0)


def _body_kind(arity: int, body: str) -> Tuple[str, Optional[str]]:
    """Return (kind, warning) for a macro body."""
    if arity == 0 and ";" not in body and "(" not in body:
        stripped = body.strip()
        words = re.findall(r"[^\s{}]+", stripped)
        braced = stripped.startswith("{") and stripped.endswith("}")
        if words and all(is_identifier(w) for w in words):
            if braced or len(words) > 1:
                return PERMISSION_SET, None
        return RULE_BLOCK, f"body {stripped!r} is neither a permission list nor rules"
    return RULE_BLOCK, None


def classify(definition: MacroDefinition) -> str:
    kind, warning = _body_kind(definition.arity, definition.body)
    if warning:
        log.warning("macro %s: %s; treating as %s", definition.name, warning, kind)
    return kind


class _Reader:
    """Character reader for macro files that tracks line numbers."""

    def __init__(self, text: str, path: str):
        self.text = text
        self.path = path
        self.pos = 0
        self.line = 1

    def error(self, message: str, line: Optional[int] = None) -> MacroError:
        return MacroError(message, SourceLocation(self.path, line or self.line))

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def advance(self) -> str:
        ch = self.text[self.pos]
        self.pos += 1
        if ch == "\n":
            self.line += 1
        return ch

    def skip_to_eol(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos] != "\n":
            self.pos += 1

    def read_quoted(self) -> str:
        """Read a `...' string (opening quote already current); return its inner text."""
        start_line = self.line
        self.advance()
        depth = 1
        out: List[str] = []
        while True:
            if self.pos >= len(self.text):
                raise self.error("unbalanced quote", start_line)
            ch = self.advance()
            if ch == "`":
                depth += 1
            elif ch == "'":
                depth -= 1
                if depth == 0:
                    return "".join(out)
            out.append(ch)

    def read_argument(self) -> Tuple[str, str]:
        """Read one macro argument up to `,` or `)`; return (text, terminator)."""
        while self.peek() in (" ", "\t", "\n"):
            self.advance()
        parts: List[str] = []
        depth = 0
        start_line = self.line
        while True:
            if self.pos >= len(self.text):
                raise self.error("unbalanced parenthesis", start_line)
            ch = self.peek()
            if ch == "`":
                parts.append(self.read_quoted())
                continue
            if ch == "'":
                raise self.error("unbalanced quote")
            if ch == "(":
                depth += 1
            elif ch == ")":
                if depth == 0:
                    self.advance()
                    return "".join(parts), ")"
                depth -= 1
            elif ch == "," and depth == 0:
                self.advance()
                return "".join(parts), ","
            parts.append(self.advance())


def parse_macro_file(
    text: str,
    existing: Optional[MacroTable] = None,
    *,
    path: str = "<macros>",
    skip: Iterable[str] = (),
) -> Dict[str, MacroDefinition]:
    """Parse `define(`name', `body')` blocks, extending a copy of `existing`.

    Names listed in `skip` (conditional guard macros) are accepted without their
    bodies being validated and are not added to the table.
    """
    table: Dict[str, MacroDefinition] = dict(existing or {})
    skip = frozenset(skip)
    rd = _Reader(text, path)
    while rd.pos < len(text):
        ch = rd.peek()
        if ch.isspace():
            rd.advance()
            continue
        if ch == "#":
            rd.skip_to_eol()
            continue
        if ch == "`":
            raise rd.error("stray quoted text at top level")
        if ch == "'":
            raise rd.error("unbalanced quote")
        match = _NAME_RE.match(text, rd.pos)
        if match is None:
            raise rd.error(f"unexpected character {ch!r}")
        word = match.group()
        line = rd.line
        rd.pos = match.end()
        if word == "dnl":
            rd.skip_to_eol()
            continue
        if word in UNSUPPORTED:
            raise rd.error(f"unsupported M4 construct '{word}'")
        if word != "define":
            raise rd.error(f"unexpected text '{word}' outside define")
        if rd.peek() != "(":
            raise rd.error("expected '(' after define")
        rd.advance()
        name, term = rd.read_argument()
        if term != ",":
            raise rd.error("define needs a name and a body", line)
        body, term = rd.read_argument()
        while term == ",":
            _, term = rd.read_argument()
        name = name.strip()
        if not _NAME_RE.fullmatch(name):
            raise rd.error(f"invalid macro name {name!r}", line)
        if name in skip:
            continue
        for construct in UNSUPPORTED:
            if re.search(rf"\b{construct}\s*\(", body):
                raise rd.error(f"unsupported M4 construct '{construct}' in macro {name}", line)
        arity = infer_arity(body)
        kind, warning = _body_kind(arity, body)
        if warning:
            log.warning("%s:%d: macro %s: %s; treating as %s", path, line, name, warning, kind)
        if name in table:
            log.warning("%s:%d: macro %s redefined (previous definition at %s)",
                        path, line, name, table[name].origin)
        table[name] = MacroDefinition(name, arity, body, SourceLocation(path, line), kind)
    return table


def substitute(body: str, args: Sequence[str], name: str = "") -> str:
    def repl(match: re.Match) -> str:
        index = int(match.group(1))
        if index == 0:
            return name
        return args[index - 1] if index <= len(args) else ""

    return _PARAM_RE.sub(repl, body)


class _Expander:
    def __init__(self, table: MacroTable, passthrough: FrozenSet[str]):
        self.table = table
        self.passthrough = passthrough

    def expand_text(self, text: str, stack: Tuple[str, ...]) -> str:
        out: List[str] = []
        pos = 0
        size = len(text)
        while pos < size:
            ch = text[pos]
            if ch == "`":
                rd = _Reader(text, "<expansion>")
                rd.pos = pos
                out.append(rd.read_quoted())
                pos = rd.pos
                continue
            if ch == "#":
                end = text.find("\n", pos)
                end = size if end < 0 else end
                out.append(text[pos:end])
                pos = end
                continue
            match = _NAME_RE.match(text, pos)
            # Names glued to a preceding identifier character are not macro calls.
            if match is None or (pos > 0 and (text[pos - 1].isalnum() or text[pos - 1] in "_$")):
                if match is None:
                    out.append(ch)
                    pos += 1
                else:
                    out.append(match.group())
                    pos = match.end()
                continue
            name = match.group()
            pos = match.end()
            if name in self.passthrough and pos < size and text[pos] == "(":
                rd = _Reader(text, "<expansion>")
                rd.pos = pos + 1
                while True:
                    _, term = rd.read_argument()
                    if term == ")":
                        break
                out.append(text[match.start():rd.pos])
                pos = rd.pos
                continue
            definition = self.table.get(name)
            if definition is None:
                if pos < size and text[pos] == "(":
                    raise MacroError(f"unknown macro '{name}'")
                out.append(name)
                continue
            args: List[str] = []
            if pos < size and text[pos] == "(":
                rd = _Reader(text, "<expansion>")
                rd.pos = pos + 1
                while True:
                    arg, term = rd.read_argument()
                    args.append(arg.strip())
                    if term == ")":
                        break
                pos = rd.pos
                if args == [""] and definition.arity == 0:
                    args = []
            out.append(self.call(definition, args, stack))
        return "".join(out)

    def call(self, definition: MacroDefinition, args: Sequence[str], stack: Tuple[str, ...]) -> str:
        if definition.name in stack:
            start = stack.index(definition.name)
            raise MacroCycleError(stack[start:] + (definition.name,))
        if len(args) != definition.arity:
            raise MacroError(
                f"macro '{definition.name}' takes {definition.arity} argument(s), "
                f"got {len(args)}"
            )
        for arg in args:
            if not is_identifier(arg):
                raise MacroError(f"macro '{definition.name}': argument {arg!r} is not an identifier")
            if arg in self.table:
                raise MacroError(f"macro '{definition.name}': macro '{arg}' used as argument")
        body = substitute(definition.body, args, definition.name)
        return self.expand_text(body, stack + (definition.name,))


def expand_text(text: str, table: MacroTable, *, passthrough: Iterable[str] = ()) -> str:
    """Expand every macro reference in `text` to a fixpoint."""
    return _Expander(table, frozenset(passthrough)).expand_text(text, ())


def expand_call(
    definition: MacroDefinition,
    args: Sequence[str],
    table: MacroTable,
    *,
    passthrough: Iterable[str] = (),
) -> str:
    return _Expander(table, frozenset(passthrough)).call(definition, list(args), ())


def permission_names(text: str) -> FrozenSet[str]:
    names = set()
    for tok in tokenize(text):
        if tok.kind == IDENT:
            names.add(tok.value)
        elif tok.kind != PUNCT or tok.value not in "{}":
            raise MacroError(f"not a permission list: {text.strip()!r}")
    return frozenset(names)


def expand(definition: MacroDefinition, args: Sequence[str], table: MacroTable) -> MacroExpansion:
    text = expand_call(definition, args, table)
    if definition.kind == PERMISSION_SET:
        return MacroExpansion(definition, tuple(args), text,
                              produced_permissions=permission_names(text))
    rules = parse_rules(text, path=f"<expansion of {definition.name}>")
    return MacroExpansion(definition, tuple(args), text, produced_rules=tuple(rules))


def permission_sets(table: MacroTable) -> Dict[str, FrozenSet[str]]:
    """Expanded permissions for every permission_set macro in the table."""
    result = {}
    for name, definition in table.items():
        if definition.kind == PERMISSION_SET:
            result[name] = expand(definition, (), table).produced_permissions
    return result
