"""Build a Policy from an ordered set of source files."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

from . import m4
from .model import (
    ALLOW,
    NEVERALLOW,
    SELF,
    AVRule,
    MacroUsage,
    MappedRule,
    Policy,
    PolicyError,
    SecurityClass,
    SourceLocation,
    TERule,
    is_identifier,
    merge_rules,
)
from .syntax import (
    IDENT,
    PUNCT,
    QUOTED,
    SyntaxErrorAt,
    Token,
    concrete_av,
    concrete_te,
    is_av_statement,
    parse_av,
    parse_neverallow,
    parse_te,
    tokenize,
)

log = logging.getLogger(__name__)

MACRO_FILES = ("global_macros", "te_macros", "ioctl_macros", "neverallow_macros")
CLASS_FILES = ("security_classes", "access_vectors")
EXTRA_FILES = ("attributes",)

# Macros whose single argument is a quoted block of statements.
DEFAULT_GUARDS = (
    "userdebug_or_eng",
    "eng",
    "userdebug",
    "not_full_treble",
    "full_treble_only",
    "with_asan",
    "with_native_coverage",
)

SKIPPED = frozenset({
    "dontaudit", "auditallow", "role", "roletype", "user", "type_change", "type_member",
    "typealias", "expandattribute", "permissive", "bool", "attribute_role", "sid",
    "fs_use_xattr", "fs_use_task", "fs_use_trans", "genfscon", "portcon", "netifcon",
    "nodecon", "sensitivity", "category", "level", "mlsconstrain", "constrain",
    "validatetrans", "mlsvalidatetrans", "policycap", "dominance", "type_member",
    "default_user", "default_role", "default_type", "default_range", "range_transition",
    "role_transition",
})
XPERMS = frozenset({"allowxperm", "neverallowxperm", "auditallowxperm", "dontauditxperm"})
BLOCKS = frozenset({"if", "optional", "else", "tunable_policy", "booleanif"})


@dataclass(frozen=True)
class SourceSet:
    files: Tuple[Tuple[str, str], ...] = ()
    macro_files: FrozenSet[str] = frozenset()

    @classmethod
    def from_dirs(cls, dirs: Sequence[Path | str]) -> "SourceSet":
        return load_source_dirs(dirs)


def _ordered_dir_files(directory: Path) -> Tuple[List[Path], List[Path]]:
    macros = [directory / n for n in MACRO_FILES if (directory / n).is_file()]
    policy = [directory / n for n in CLASS_FILES + EXTRA_FILES if (directory / n).is_file()]
    policy += sorted(p for p in directory.glob("*.te") if p.is_file())
    return macros, policy


def load_source_dirs(dirs: Sequence[Path | str]) -> SourceSet:
    """Read macro files and `.te` files from layered policy directories, in order."""
    macro_paths: List[Path] = []
    policy_paths: List[Path] = []
    for directory in dirs:
        directory = Path(directory)
        if not directory.is_dir():
            raise PolicyError(f"policy directory not found: {directory}")
        macros, policy = _ordered_dir_files(directory)
        macro_paths += macros
        policy_paths += policy
    files = tuple((str(p), p.read_text(encoding="utf-8")) for p in macro_paths + policy_paths)
    return SourceSet(files, frozenset(str(p) for p in macro_paths))


@dataclass
class _Context:
    file: str
    text: str
    via_macro: Optional[MacroUsage] = None
    guard: Optional[str] = None
    # Fixed line for every rule (macro expansions map to the usage line).
    line: Optional[int] = None
    origin: Optional[str] = None


@dataclass
class _State:
    macros: Dict[str, m4.MacroDefinition]
    guards: FrozenSet[str]
    rules: List[MappedRule] = field(default_factory=list)
    neverallows: List[MappedRule] = field(default_factory=list)
    types: Dict[str, SourceLocation] = field(default_factory=dict)
    attributes: Dict[str, SourceLocation] = field(default_factory=dict)
    memberships: List[Tuple[str, str, SourceLocation]] = field(default_factory=list)
    classes: Dict[str, Set[str]] = field(default_factory=dict)
    commons: Dict[str, Set[str]] = field(default_factory=dict)
    usages: List[MacroUsage] = field(default_factory=list)
    skipped: Counter = field(default_factory=Counter)
    warnings: List[str] = field(default_factory=list)

    def warn(self, message: str) -> None:
        self.warnings.append(message)
        log.warning("%s", message)


class _FileParser:
    def __init__(self, state: _State, ctx: _Context, tokens: List[Token]):
        self.state = state
        self.ctx = ctx
        self.tokens = tokens
        self.pos = 0

    def loc(self, tok: Token) -> SourceLocation:
        return SourceLocation(self.ctx.file, self.ctx.line or tok.line)

    def error(self, message: str, tok: Token) -> PolicyError:
        return PolicyError(message, self.loc(tok))

    def run(self) -> None:
        toks = self.tokens
        while self.pos < len(toks):
            tok = toks[self.pos]
            nxt = toks[self.pos + 1] if self.pos + 1 < len(toks) else None
            is_call = nxt is not None and nxt.kind == PUNCT and nxt.value == "("
            if tok.kind == IDENT and is_call and tok.value in self.state.guards:
                self.guard_block(tok)
            elif tok.kind == IDENT and tok.value in self.state.macros and (
                is_call or self.state.macros[tok.value].kind == m4.RULE_BLOCK
            ):
                self.macro_usage(tok, is_call)
            elif tok.kind == IDENT and tok.value in ("class", "common"):
                self.class_statement()
            elif tok.kind == IDENT and tok.value in BLOCKS:
                self.skip_block(tok)
            elif tok.kind == PUNCT and tok.value == ";":
                self.pos += 1
            else:
                self.statement()

    def _call_args(self, name_tok: Token) -> Tuple[List[List[Token]], Token]:
        """Collect comma-separated argument token lists of a call; return (args, ')')."""
        self.pos += 2
        args: List[List[Token]] = [[]]
        depth = 0
        while True:
            if self.pos >= len(self.tokens):
                raise self.error(f"unterminated call to '{name_tok.value}'", name_tok)
            tok = self.tokens[self.pos]
            self.pos += 1
            if tok.kind == PUNCT and tok.value == "(":
                depth += 1
            elif tok.kind == PUNCT and tok.value == ")":
                if depth == 0:
                    return args, tok
                depth -= 1
            elif tok.kind == PUNCT and tok.value == "," and depth == 0:
                args.append([])
                continue
            args[-1].append(tok)

    def _skip_semicolon(self) -> None:
        if self.pos < len(self.tokens):
            tok = self.tokens[self.pos]
            if tok.kind == PUNCT and tok.value == ";":
                self.pos += 1

    def guard_block(self, name_tok: Token) -> None:
        args, _ = self._call_args(name_tok)
        self._skip_semicolon()
        for arg in args:
            if not arg:
                continue
            if len(arg) != 1 or arg[0].kind != QUOTED:
                raise self.error(f"'{name_tok.value}' expects a quoted block of statements", name_tok)
            block = arg[0]
            inner = block.value
            ctx = replace(self.ctx, text=inner, guard=self.ctx.guard or name_tok.value)
            if self.ctx.line is None:
                tokens = tokenize(inner, first_line=block.line, path=self.ctx.file)
            else:
                tokens = tokenize(inner, path=self.ctx.file)
            _FileParser(self.state, ctx, tokens).run()

    def macro_usage(self, name_tok: Token, is_call: bool) -> None:
        definition = self.state.macros[name_tok.value]
        start = name_tok.start
        if is_call:
            arg_tokens, close = self._call_args(name_tok)
            end = close.end
            if arg_tokens == [[]]:
                arg_tokens = []
        else:
            self.pos += 1
            arg_tokens, end = [], name_tok.end
        args: List[str] = []
        for arg in arg_tokens:
            if len(arg) != 1 or arg[0].kind not in (IDENT, QUOTED) or not is_identifier(arg[0].value):
                text = " ".join(t.value for t in arg)
                raise self.error(
                    f"macro '{definition.name}': argument {text!r} is not an identifier", name_tok)
            args.append(arg[0].value)
        self._skip_semicolon()
        if len(args) != definition.arity:
            raise self.error(
                f"macro '{definition.name}' takes {definition.arity} argument(s), got {len(args)}",
                name_tok,
            )
        location = self.loc(name_tok)
        origin = self.ctx.origin or self.ctx.text[start:end]
        usage = self.ctx.via_macro
        if usage is None:
            usage = MacroUsage(definition.name, tuple(args), location)
            self.state.usages.append(usage)
        try:
            text = m4.expand_call(definition, args, self.state.macros,
                                  passthrough=self.state.guards)
        except PolicyError as exc:
            raise self.error(str(exc), name_tok) from None
        ctx = _Context(self.ctx.file, text, usage, self.ctx.guard, location.line, origin)
        try:
            tokens = tokenize(text, path=self.ctx.file)
        except SyntaxErrorAt as exc:
            raise self.error(f"in expansion of '{definition.name}': {exc}", name_tok) from None
        _FileParser(self.state, ctx, tokens).run()

    def class_statement(self) -> None:
        # Access-vector declarations are not `;`-terminated.
        toks = self.tokens
        keyword = toks[self.pos]
        self.pos += 1
        if self.pos >= len(toks) or toks[self.pos].kind != IDENT:
            raise self.error(f"expected a name after '{keyword.value}'", keyword)
        name = toks[self.pos].value
        self.pos += 1
        perms: Set[str] = set()
        if self.pos < len(toks) and toks[self.pos].value == "inherits":
            self.pos += 1
            common = toks[self.pos].value
            self.pos += 1
            perms |= self.state.commons.get(common, set())
        if self.pos < len(toks) and toks[self.pos].kind == PUNCT and toks[self.pos].value == "{":
            self.pos += 1
            while self.pos < len(toks) and toks[self.pos].value != "}":
                perms.add(toks[self.pos].value)
                self.pos += 1
            self.pos += 1
        self._skip_semicolon()
        table = self.state.commons if keyword.value == "common" else self.state.classes
        table.setdefault(name, set()).update(perms)

    def skip_block(self, tok: Token) -> None:
        self.state.skipped[tok.value] += 1
        depth = 0
        while self.pos < len(self.tokens):
            t = self.tokens[self.pos]
            self.pos += 1
            if t.kind == PUNCT and t.value == "{":
                depth += 1
            elif t.kind == PUNCT and t.value == "}":
                depth -= 1
                if depth == 0:
                    nxt = self.tokens[self.pos] if self.pos < len(self.tokens) else None
                    if nxt is None or nxt.value != "else":
                        return

    def statement(self) -> None:
        toks = self.tokens
        start = self.pos
        depth = 0
        while self.pos < len(toks):
            t = toks[self.pos]
            if t.kind == PUNCT and t.value == "{":
                depth += 1
            elif t.kind == PUNCT and t.value == "}":
                depth -= 1
            elif t.kind == PUNCT and t.value == ";" and depth == 0:
                break
            self.pos += 1
        if self.pos >= len(toks):
            raise self.error("statement not terminated by ';'", toks[start])
        stmt = toks[start:self.pos]
        end_tok = toks[self.pos]
        self.pos += 1
        origin = self.ctx.origin or self.ctx.text[stmt[0].start:end_tok.end]
        self.build(stmt, origin)

    def _expand_perm_macros(self, stmt: List[Token]) -> List[Token]:
        """Inline zero-arity macro references (permission and class sets)."""
        out: List[Token] = []
        for tok in stmt:
            definition = self.state.macros.get(tok.value) if tok.kind == IDENT else None
            if definition is None:
                out.append(tok)
                continue
            if definition.arity:
                raise self.error(f"macro '{tok.value}' needs arguments here", tok)
            text = m4.expand_call(definition, (), self.state.macros)
            out.extend(replace(t, line=tok.line) for t in tokenize(text))
        return out

    def build(self, stmt: List[Token], origin: str) -> None:
        head = stmt[0]
        keyword = head.value
        location = self.loc(head)
        if keyword in XPERMS:
            raise self.error(f"unsupported extended-permission statement '{keyword}'", head)
        try:
            if keyword in (ALLOW, NEVERALLOW) and is_av_statement(stmt):
                self.access_vector(stmt, origin, location)
            elif keyword == ALLOW:
                self.state.skipped["allow (role)"] += 1
            elif keyword == "type_transition":
                raw = parse_te(self._expand_perm_macros(stmt))
                for rule in concrete_te(raw):
                    self.add_rule(MappedRule(rule, location, origin, self.ctx.via_macro,
                                             self.ctx.guard))
            elif keyword == "type":
                self.declare_type(stmt, location)
            elif keyword == "attribute":
                for tok in stmt[1:]:
                    if tok.kind == IDENT:
                        self.state.attributes.setdefault(tok.value, location)
            elif keyword == "typeattribute":
                names = [t.value for t in stmt[1:] if t.kind == IDENT]
                if len(names) < 2:
                    raise self.error("typeattribute needs a type and an attribute", head)
                for attr in names[1:]:
                    self.state.memberships.append((names[0], attr, location))
            else:
                self.state.skipped[keyword] += 1
        except SyntaxErrorAt as exc:
            raise self.error(str(exc), head) from None

    def declare_type(self, stmt: List[Token], location: SourceLocation) -> None:
        names = []
        aliases = False
        for tok in stmt[1:]:
            if tok.kind == IDENT and tok.value == "alias":
                aliases = True
            elif tok.kind == PUNCT and tok.value == ",":
                aliases = False
            elif tok.kind == IDENT and not aliases:
                names.append(tok.value)
        if not names:
            raise self.error("type declaration without a name", stmt[0])
        self.state.types.setdefault(names[0], location)
        for attr in names[1:]:
            self.state.memberships.append((names[0], attr, location))

    def access_vector(self, stmt: List[Token], origin: str, location: SourceLocation) -> None:
        if stmt[0].value == NEVERALLOW:
            rule = parse_neverallow(self._expand_perm_macros(stmt))
            self.state.neverallows.append(
                MappedRule(rule, location, origin, self.ctx.via_macro, self.ctx.guard))
            return
        written = _written_perms(stmt)
        raw = parse_av(self._expand_perm_macros(stmt))
        for ident in raw.sources + raw.targets + raw.classes + raw.perms:
            if not is_identifier(ident):
                raise self.error(f"invalid identifier {ident!r}", stmt[0])
        for rule in concrete_av(raw):
            self.add_rule(MappedRule(rule, location, origin, self.ctx.via_macro,
                                     self.ctx.guard, written_perms=written))

    def add_rule(self, mapped: MappedRule) -> None:
        self.state.rules.append(mapped)


def _written_perms(stmt: List[Token]) -> Tuple[str, ...]:
    """Permission tokens of an allow statement as written (after the class)."""
    depth = 0
    colon = None
    for i, tok in enumerate(stmt):
        if tok.kind == PUNCT and tok.value == "{":
            depth += 1
        elif tok.kind == PUNCT and tok.value == "}":
            depth -= 1
        elif tok.kind == PUNCT and tok.value == ":" and depth == 0:
            colon = i
            break
    if colon is None:
        return ()
    rest = stmt[colon + 1:]
    # Skip the class name or class set.
    if rest and rest[0].value == "{":
        close = next(i for i, t in enumerate(rest) if t.value == "}")
        rest = rest[close + 1:]
    else:
        rest = rest[1:]
    seen: List[str] = []
    for tok in rest:
        if tok.kind == IDENT and tok.value not in seen:
            seen.append(tok.value)
    return tuple(seen)


def _check_declared(state: _State, undeclared: str) -> None:
    known = set(state.types) | set(state.attributes) | {SELF}
    problems: List[str] = []
    for mapped in state.rules:
        rule = mapped.rule
        names = [rule.source, rule.target]
        if isinstance(rule, TERule):
            names.append(rule.default_type)
        for name in names:
            if name not in known:
                problems.append(f"{mapped.location}: undeclared type or attribute '{name}'")
    for type_name, attr, location in state.memberships:
        if attr not in state.attributes:
            problems.append(f"{location}: undeclared attribute '{attr}'")
        if type_name not in state.types:
            problems.append(f"{location}: undeclared type '{type_name}'")
    if not problems:
        return
    if undeclared == "error":
        shown = problems[:20]
        more = f"\n... and {len(problems) - 20} more" if len(problems) > 20 else ""
        raise PolicyError("undeclared identifiers:\n" + "\n".join(shown) + more)
    for problem in dict.fromkeys(problems):
        state.warn(problem)


def parse_policy(
    src: SourceSet,
    *,
    undeclared: str = "error",
    guards: Iterable[str] = DEFAULT_GUARDS,
) -> Policy:
    """Parse sources into a Policy carrying both the literal and attribute-expanded views."""
    if undeclared not in ("error", "warn"):
        raise ValueError("undeclared must be 'error' or 'warn'")
    guards = frozenset(guards)
    macros: Dict[str, m4.MacroDefinition] = {}
    for path, text in src.files:
        if path in src.macro_files:
            macros = m4.parse_macro_file(text, macros, path=path, skip=guards)
    state = _State(macros=macros, guards=guards)
    line_counts: Dict[str, int] = {}
    for path, text in src.files:
        line_counts[path] = text.count("\n") + (0 if text.endswith("\n") or not text else 1)
        if path in src.macro_files:
            continue
        tokens = tokenize(text, path=path)
        _FileParser(state, _Context(path, text), tokens).run()

    for keyword, count in sorted(state.skipped.items()):
        state.warn(f"skipped {count} '{keyword}' statement(s)")
    _check_declared(state, undeclared)

    members: Dict[str, Set[str]] = {a: set() for a in state.attributes}
    for type_name, attr, _ in state.memberships:
        if attr in members and type_name in state.types:
            members[attr].add(type_name)

    classes = {name: SecurityClass(name, frozenset(perms)) for name, perms in state.classes.items()}
    for mapped in state.rules:
        rule = mapped.rule
        if isinstance(rule, AVRule):
            known = classes.get(rule.security_class)
            if known is not None and known.known_permissions:
                unknown = rule.permissions - known.known_permissions
                if unknown:
                    state.warn(
                        f"{mapped.location}: permission(s) {', '.join(sorted(unknown))} "
                        f"not defined for class {rule.security_class}"
                    )

    policy = Policy(
        rules=tuple(merge_rules(state.rules)),
        neverallows=tuple(state.neverallows),
        types=frozenset(state.types),
        attributes={a: frozenset(m) for a, m in sorted(members.items())},
        classes=classes,
        macro_usages=tuple(state.usages),
        macros=dict(macros),
        files=line_counts,
        warnings=tuple(state.warnings),
    )
    return expand_attributes(policy)


def expand_attributes(policy: Policy) -> Policy:
    """Attach the attribute-expanded view: one replica per member type."""
    expanded: List[MappedRule] = []
    warnings = list(policy.warnings)
    empty_reported: Set[str] = set()

    def members(name: str) -> List[str]:
        if name in policy.attributes:
            found = sorted(policy.attributes[name])
            if not found and name not in empty_reported:
                empty_reported.add(name)
                message = f"attribute '{name}' has no members; its rules expand to nothing"
                warnings.append(message)
                log.warning("%s", message)
            return found
        return [name]

    for mapped in policy.rules:
        rule = mapped.rule
        sources = members(rule.source)
        targets = [SELF] if rule.target == SELF else members(rule.target)
        if sources == [rule.source] and targets == [rule.target]:
            expanded.append(mapped)
            continue
        for s in sources:
            for t in targets:
                expanded.append(replace(mapped, rule=replace(rule, source=s, target=t),
                                        expanded_from=rule))
    return replace(
        policy,
        expanded_rules=tuple(expanded),
        expanded_rule_count=len(expanded),
        warnings=tuple(warnings),
    )


def parse_text(text: str, macros: str = "", *, path: str = "policy.te",
               undeclared: str = "error") -> Policy:
    """Convenience wrapper for one policy file plus optional macro definitions."""
    files: List[Tuple[str, str]] = []
    macro_files = set()
    if macros:
        files.append(("global_macros", macros))
        macro_files.add("global_macros")
    files.append((path, text))
    return parse_policy(SourceSet(tuple(files), frozenset(macro_files)), undeclared=undeclared)
