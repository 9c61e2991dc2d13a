"""Immutable domain types for a parsed type-enforcement policy."""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Tuple, Union

IDENTIFIER_RE = re.compile(r"[A-Za-z0-9_.][A-Za-z0-9_.\-]*\Z")

SELF = "self"
ALLOW = "allow"
NEVERALLOW = "neverallow"
TYPE_TRANSITION = "type_transition"


class PolicyError(Exception):
    """Raised for malformed policy sources or inconsistent models."""

    def __init__(self, message: str, location: Optional["SourceLocation"] = None):
        self.location = location
        if location is not None:
            message = f"{location}: {message}"
        super().__init__(message)


def is_identifier(name: str) -> bool:
    return bool(name) and IDENTIFIER_RE.match(name) is not None


def check_identifier(name: str) -> str:
    if not is_identifier(name):
        raise PolicyError(f"invalid identifier {name!r}")
    return name


@dataclass(frozen=True, order=True)
class SourceLocation:
    file: str
    line: int

    def __str__(self) -> str:
        return f"{self.file}:{self.line}"


@dataclass(frozen=True)
class SecurityClass:
    name: str
    known_permissions: FrozenSet[str] = frozenset()


def format_names(names: Iterable[str]) -> str:
    """Render a name set the way policy sources do: bare when single, braced otherwise."""
    items = sorted(names)
    if len(items) == 1:
        return items[0]
    return "{ " + " ".join(items) + " }"


@dataclass(frozen=True)
class AVRule:
    kind: str
    source: str
    target: str
    security_class: str
    permissions: FrozenSet[str]

    def __post_init__(self) -> None:
        if self.kind not in (ALLOW, NEVERALLOW):
            raise PolicyError(f"unknown access-vector rule kind {self.kind!r}")
        if not self.permissions:
            raise PolicyError(f"{self.kind} rule without permissions")
        for name in (self.source, self.target, self.security_class, *self.permissions):
            check_identifier(name)
        object.__setattr__(self, "permissions", frozenset(self.permissions))

    @property
    def key(self) -> str:
        return rule_key(self)

    def text(self) -> str:
        return (
            f"{self.kind} {self.source} {self.target}:{self.security_class} "
            f"{format_names(self.permissions)};"
        )


@dataclass(frozen=True)
class TERule:
    source: str
    target: str
    security_class: str
    default_type: str
    # Optional object name for name-based transitions.
    name: Optional[str] = None

    kind = TYPE_TRANSITION

    def __post_init__(self) -> None:
        for ident in (self.source, self.target, self.security_class, self.default_type):
            check_identifier(ident)

    @property
    def key(self) -> str:
        return rule_key(self)

    def text(self) -> str:
        suffix = f' "{self.name}"' if self.name is not None else ""
        return (
            f"type_transition {self.source} {self.target}:{self.security_class} "
            f"{self.default_type}{suffix};"
        )


Rule = Union[AVRule, TERule]


@dataclass(frozen=True)
class TypeSet:
    """A set expression over identifiers: `a`, `{ a b -c }`, `~{ a }`, `*`."""

    names: FrozenSet[str] = frozenset()
    excluded: FrozenSet[str] = frozenset()
    complement: bool = False
    wildcard: bool = False

    def text(self) -> str:
        if self.wildcard and not self.excluded and not self.complement:
            return "*"
        parts = sorted(self.names) + [f"-{n}" for n in sorted(self.excluded)]
        if self.wildcard:
            parts.insert(0, "*")
        body = parts[0] if len(parts) == 1 else "{ " + " ".join(parts) + " }"
        return f"~{body}" if self.complement else body


@dataclass(frozen=True)
class NeverallowRule:
    source: TypeSet
    target: TypeSet
    classes: TypeSet
    permissions: TypeSet

    kind = NEVERALLOW

    def text(self) -> str:
        return (
            f"neverallow {self.source.text()} {self.target.text()}:"
            f"{self.classes.text()} {self.permissions.text()};"
        )


@dataclass(frozen=True)
class MacroUsage:
    name: str
    args: Tuple[str, ...]
    location: Optional[SourceLocation] = None

    def text(self) -> str:
        return f"{self.name}({', '.join(self.args)})"


@dataclass(frozen=True)
class MappedRule:
    rule: Union[Rule, NeverallowRule]
    location: SourceLocation
    origin_text: str
    via_macro: Optional[MacroUsage] = None
    guard: Optional[str] = None
    # Permission tokens as written, before permission-set macros were expanded.
    written_perms: Tuple[str, ...] = ()
    locations: Tuple[SourceLocation, ...] = ()
    # For attribute replicas: the rule as written before replication.
    expanded_from: Optional[Rule] = None

    def __post_init__(self) -> None:
        if not self.locations:
            object.__setattr__(self, "locations", (self.location,))

    @property
    def key(self) -> str:
        return rule_key(self.rule)

    def text(self) -> str:
        return self.rule.text()


@dataclass(frozen=True, eq=False)
class Policy:
    rules: Tuple[MappedRule, ...] = ()
    neverallows: Tuple[MappedRule, ...] = ()
    types: FrozenSet[str] = frozenset()
    attributes: Mapping[str, FrozenSet[str]] = field(default_factory=dict)
    classes: Mapping[str, SecurityClass] = field(default_factory=dict)
    macro_usages: Tuple[MacroUsage, ...] = ()
    macros: Mapping[str, object] = field(default_factory=dict)
    expanded_rules: Tuple[MappedRule, ...] = ()
    expanded_rule_count: int = 0
    files: Mapping[str, int] = field(default_factory=dict)
    warnings: Tuple[str, ...] = ()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Policy):
            return NotImplemented
        return (
            self.rules == other.rules
            and self.neverallows == other.neverallows
            and self.types == other.types
            and dict(self.attributes) == dict(other.attributes)
            and dict(self.classes) == dict(other.classes)
            and self.macro_usages == other.macro_usages
            and self.expanded_rules == other.expanded_rules
            and self.expanded_rule_count == other.expanded_rule_count
        )

    def is_attribute(self, name: str) -> bool:
        return name in self.attributes

    def known_permissions(self, security_class: str) -> FrozenSet[str]:
        cls = self.classes.get(security_class)
        return cls.known_permissions if cls is not None else frozenset()


def rule_key(rule: Union[Rule, NeverallowRule]) -> str:
    """Canonical "kind source target:class" string; permissions and defaults excluded."""
    if isinstance(rule, NeverallowRule):
        return f"neverallow {rule.source.text()} {rule.target.text()}:{rule.classes.text()}"
    key = f"{rule.kind} {rule.source} {rule.target}:{rule.security_class}"
    if isinstance(rule, TERule) and rule.name is not None:
        key += f' "{rule.name}"'
    return key


def _provenance(mapped: MappedRule) -> tuple:
    return (mapped.via_macro, mapped.guard)


def merge_rules(rules: Iterable[MappedRule]) -> List[MappedRule]:
    """Merge access-vector rules that share a key and provenance.

    Rules coming from the same macro usage (or from literal statements under the
    same guard) are merged by permission union; the merged rule keeps the first
    location and records every contributing one. Type transitions are kept
    as-is, but two of them with the same key and different defaults are an error.
    """
    merged: Dict[tuple, MappedRule] = {}
    order: List[tuple] = []
    transitions: Dict[str, MappedRule] = {}
    for mapped in rules:
        rule = mapped.rule
        if isinstance(rule, TERule):
            seen = transitions.get(rule.key)
            if seen is not None and seen.rule.default_type != rule.default_type:
                raise PolicyError(
                    f"conflicting type_transition defaults for '{rule.key}': "
                    f"{seen.rule.default_type} at {seen.location}, "
                    f"{rule.default_type} at {mapped.location}"
                )
            transitions.setdefault(rule.key, mapped)
            ident = ("te", len(order))
            merged[ident] = mapped
            order.append(ident)
            continue
        ident = (rule.key, _provenance(mapped))
        prior = merged.get(ident)
        if prior is None:
            merged[ident] = mapped
            order.append(ident)
            continue
        perms = prior.rule.permissions | rule.permissions
        written = prior.written_perms + tuple(
            p for p in mapped.written_perms if p not in prior.written_perms
        )
        locations = prior.locations + tuple(
            loc for loc in mapped.locations if loc not in prior.locations
        )
        merged[ident] = replace(
            prior,
            rule=replace(prior.rule, permissions=perms),
            written_perms=written,
            locations=locations,
        )
    return [merged[ident] for ident in order]


def permission_index(rules: Iterable[MappedRule]) -> Dict[tuple, FrozenSet[str]]:
    """Union of granted permissions per (kind, source, target, class)."""
    index: Dict[tuple, set] = {}
    for mapped in rules:
        rule = mapped.rule
        if isinstance(rule, AVRule):
            ident = (rule.kind, rule.source, rule.target, rule.security_class)
            index.setdefault(ident, set()).update(rule.permissions)
    return {k: frozenset(v) for k, v in index.items()}
