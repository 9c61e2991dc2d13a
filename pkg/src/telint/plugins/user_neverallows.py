"""Check the policy against neverallow rules supplied by the analyst."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Optional, Set, Tuple

from .. import m4
from ..host import ConfigError, Finding, Options, Plugin
from ..model import ALLOW, SELF, AVRule, NeverallowRule, Policy, PolicyError, TypeSet
from ..syntax import parse_rule

PLUGIN = "user_neverallows"


@dataclass(frozen=True)
class ResolvedSpec:
    spec: NeverallowRule
    sources: FrozenSet[str]
    targets: FrozenSet[str]
    target_self: bool
    classes: Optional[FrozenSet[str]]  # None: every class
    names: FrozenSet[str]
    excluded: FrozenSet[str]
    wildcard: bool
    complement: bool

    def forbidden(self, perms: Iterable[str]) -> List[str]:
        hits = []
        for perm in perms:
            listed = (self.wildcard or perm in self.names) and perm not in self.excluded
            if listed != self.complement:
                hits.append(perm)
        return sorted(hits)

    def matches(self, rule: AVRule) -> List[str]:
        if rule.source not in self.sources:
            return []
        if self.classes is not None and rule.security_class not in self.classes:
            return []
        target = rule.source if rule.target == SELF else rule.target
        if target not in self.targets and not (self.target_self and target == rule.source):
            return []
        return self.forbidden(rule.permissions)


def parse_specs(lines: Iterable[str]) -> Tuple[NeverallowRule, ...]:
    specs = []
    for line in lines:
        rule = parse_rule(line)
        if not isinstance(rule, NeverallowRule):
            raise ConfigError(f"not a neverallow rule: {line!r}")
        specs.append(rule)
    return tuple(specs)


class _Resolver:
    def __init__(self, policy: Policy):
        self.policy = policy
        self.universe = frozenset(policy.types)
        self.perm_macros = m4.permission_sets(policy.macros) if policy.macros else {}
        self.unknown: Set[str] = set()

    def types(self, expr: TypeSet, allow_self: bool) -> Tuple[FrozenSet[str], bool]:
        has_self = False

        def expand(names: Iterable[str]) -> Set[str]:
            nonlocal has_self
            out: Set[str] = set()
            for name in names:
                if name == SELF and allow_self:
                    has_self = True
                elif name in self.policy.attributes:
                    out |= self.policy.attributes[name]
                elif name in self.universe:
                    out.add(name)
                else:
                    self.unknown.add(name)
            return out

        base = set(self.universe) if expr.wildcard else expand(expr.names)
        base -= expand(expr.excluded)
        if expr.complement:
            base = set(self.universe) - base
            has_self = False
        return frozenset(base), has_self

    def classes(self, expr: TypeSet) -> Optional[FrozenSet[str]]:
        declared = set(self.policy.classes)
        if declared:
            self.unknown |= (expr.names | expr.excluded) - declared
        if expr.wildcard or expr.complement:
            if not declared:
                if expr.names or expr.excluded:
                    raise ConfigError("class complement needs declared security classes")
                return None
            base = declared if expr.wildcard else set(expr.names)
            base = base - expr.excluded
            return frozenset(declared - base if expr.complement else base)
        return frozenset(expr.names - expr.excluded)

    def perms(self, names: FrozenSet[str], classes: Optional[FrozenSet[str]]) -> FrozenSet[str]:
        out: Set[str] = set()
        vocabulary: Set[str] = set()
        for cls in (classes if classes is not None else self.policy.classes):
            vocabulary |= self.policy.known_permissions(cls)
        for name in names:
            if name in self.perm_macros:
                out |= self.perm_macros[name]
                continue
            if vocabulary and name not in vocabulary:
                self.unknown.add(name)
            out.add(name)
        return frozenset(out)

    def resolve(self, spec: NeverallowRule) -> ResolvedSpec:
        self.unknown = set()
        sources, _ = self.types(spec.source, allow_self=False)
        targets, target_self = self.types(spec.target, allow_self=True)
        classes = self.classes(spec.classes)
        p = spec.permissions
        resolved = ResolvedSpec(spec, sources, targets, target_self, classes,
                                self.perms(p.names, classes), self.perms(p.excluded, classes),
                                p.wildcard, p.complement)
        if self.unknown:
            raise ConfigError(f"[{PLUGIN}] '{spec.text()}': unknown identifier(s) "
                              + ", ".join(sorted(self.unknown)))
        return resolved


def resolve_specs(policy: Policy, specs: Iterable[NeverallowRule]) -> List[ResolvedSpec]:
    resolver = _Resolver(policy)
    return [resolver.resolve(spec) for spec in specs]


def enforce_neverallows(policy: Policy, specs: Iterable[NeverallowRule]) -> List[Finding]:
    """One violation per (expanded allow rule, spec) pair that grants a forbidden permission."""
    resolved = resolve_specs(policy, specs)
    by_source: Dict[str, List] = {}
    for mapped in policy.expanded_rules:
        rule = mapped.rule
        if isinstance(rule, AVRule) and rule.kind == ALLOW:
            by_source.setdefault(rule.source, []).append(mapped)
    findings = []
    seen = set()
    for spec in resolved:
        for source in sorted(spec.sources & by_source.keys()):
            for mapped in by_source[source]:
                hits = spec.matches(mapped.rule)
                if not hits:
                    continue
                ident = (mapped.location, mapped.rule.text(), spec.spec)
                if ident in seen:
                    continue
                seen.add(ident)
                findings.append(Finding(
                    PLUGIN, "violation", mapped.location, mapped.rule.text(),
                    f"violates '{spec.spec.text()}': grants {' '.join(hits)}"))
    return findings


class UserNeverallowsPlugin(Plugin):
    name = PLUGIN
    description = "report rules that violate analyst-supplied neverallow rules"

    def configure(self, options: Options) -> Tuple[NeverallowRule, ...]:
        try:
            return parse_specs(options.strings("rules"))
        except (ConfigError, PolicyError) as exc:
            raise options.error("rules", str(exc)) from None

    def run(self, policy: Policy, settings: Tuple[NeverallowRule, ...]) -> List[Finding]:
        return enforce_neverallows(policy, settings)
