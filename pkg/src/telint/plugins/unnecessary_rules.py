"""Find ineffective rule combinations, debug rules and ineffective permissions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple

from ..host import ConfigError, Finding, Options, Plugin
from ..model import ALLOW, AVRule, MappedRule, Policy, PolicyError, TERule, permission_index
from ..syntax import IDENT, PUNCT, tokenize
from ..templates import RuleTemplate, parse_template, render_placeholders

PLUGIN = "unnecessary_rules"


@dataclass(frozen=True)
class RuleTuple:
    templates: Tuple[RuleTemplate, ...]

    def __post_init__(self) -> None:
        if len(self.templates) < 2:
            raise ConfigError("a rule tuple needs at least two templates")
        first = self.templates[0].variables
        for template in self.templates[1:]:
            missing = template.variables - first
            if missing:
                names = ", ".join(f"$ARG{v}" for v in sorted(missing))
                raise ConfigError(
                    f"'{render_placeholders(template)}' uses {names}, "
                    f"which the first template does not bind")

    @classmethod
    def parse(cls, lines: Iterable[str]) -> "RuleTuple":
        return cls(tuple(parse_template(line) for line in lines))


@dataclass(frozen=True)
class PermissionConstraint:
    trigger_class: str
    trigger_perms: FrozenSet[str]
    required_perms: FrozenSet[str] = frozenset()
    alternative_class: Optional[str] = None
    alternative_perms: FrozenSet[str] = frozenset()

    def __post_init__(self) -> None:
        if not self.trigger_perms:
            raise ConfigError("constraint trigger needs permissions")
        if not self.required_perms and not self.alternative_perms:
            raise ConfigError("constraint needs required or alternative permissions")
        if self.alternative_perms and not self.alternative_class:
            raise ConfigError("alternative permissions need a class")


def parse_class_perms(text: str) -> Tuple[str, FrozenSet[str]]:
    """`file { open read }` -> ("file", {"open", "read"})."""
    tokens = tokenize(text)
    if not tokens or tokens[0].kind != IDENT:
        raise ConfigError(f"expected 'class {{ perms }}', got {text!r}")
    perms = set()
    for tok in tokens[1:]:
        if tok.kind == IDENT:
            perms.add(tok.value)
        elif tok.kind != PUNCT or tok.value not in "{}":
            raise ConfigError(f"unexpected {tok.value!r} in {text!r}")
    return tokens[0].value, frozenset(perms)


@dataclass(frozen=True)
class UnnecessaryConfig:
    tuples: Tuple[RuleTuple, ...] = ()
    debug_types: FrozenSet[str] = frozenset()
    debug_guards: FrozenSet[str] = frozenset({"userdebug_or_eng", "eng"})
    constraints: Tuple[PermissionConstraint, ...] = ()


def _first_rule_by_key(rules: Iterable[MappedRule]) -> Dict[tuple, MappedRule]:
    first: Dict[tuple, MappedRule] = {}
    for mapped in rules:
        rule = mapped.rule
        if isinstance(rule, AVRule):
            first.setdefault((rule.kind, rule.source, rule.target, rule.security_class), mapped)
    return first


class _Lookup:
    """Aggregated view of the unexpanded rules for satisfaction checks."""

    def __init__(self, policy: Policy):
        self.perms = permission_index(policy.rules)
        self.first = _first_rule_by_key(policy.rules)
        self.transitions = [m for m in policy.rules if isinstance(m.rule, TERule)]
        self.te_set = {m.rule for m in self.transitions}

    def satisfied(self, rule) -> bool:
        if isinstance(rule, TERule):
            return rule in self.te_set
        granted = self.perms.get((rule.kind, rule.source, rule.target, rule.security_class))
        return granted is not None and rule.permissions <= granted


def check_tuples(policy: Policy, tuples: Iterable[RuleTuple]) -> List[Finding]:
    lookup = _Lookup(policy)
    findings: List[Finding] = []
    seen = set()
    for rule_tuple in tuples:
        first, rest = rule_tuple.templates[0], rule_tuple.templates[1:]
        triggers: List[Tuple[MappedRule, object]] = []
        if first.kind == "type_transition":
            triggers = [(m, m.rule) for m in lookup.transitions]
        else:
            for ident, perms in lookup.perms.items():
                if ident[0] == first.kind and first.permissions <= perms:
                    triggers.append((lookup.first[ident], AVRule(*ident, perms)))
        for mapped, rule in triggers:
            for binding in first.bind(rule):
                missing = []
                for template in rest:
                    try:
                        wanted = template.instantiate(binding)
                    except PolicyError:
                        continue
                    if not lookup.satisfied(wanted):
                        missing.append(wanted.text())
                if not missing:
                    continue
                ident = (mapped.location, rule.text(), tuple(missing))
                if ident in seen:
                    continue
                seen.add(ident)
                findings.append(Finding(
                    PLUGIN, "warning", mapped.location, rule.text(),
                    f"rule is ineffective without {len(missing)} companion rule(s): "
                    + " ".join(missing),
                    suggestion="\n".join(missing),
                ))
    return findings


def check_debug(policy: Policy, debug_types: FrozenSet[str],
                guards: FrozenSet[str] = frozenset()) -> List[Finding]:
    """Rules of the expanded view naming a debug type outside a debug guard macro."""
    if not debug_types:
        return []
    findings = []
    seen = set()
    for mapped in policy.expanded_rules:
        rule = mapped.rule
        if isinstance(rule, AVRule) and rule.kind != ALLOW:
            continue
        if mapped.guard is not None and mapped.guard in guards:
            continue
        hits = sorted({rule.source, rule.target} & debug_types)
        if not hits:
            continue
        ident = (mapped.location, rule.text())
        if ident in seen:
            continue
        seen.add(ident)
        findings.append(Finding(
            PLUGIN, "warning", mapped.location, rule.text(),
            f"debug type {', '.join(hits)} used outside a debug guard macro"))
    return findings


def check_ineffective_perms(policy: Policy,
                            constraints: Iterable[PermissionConstraint]) -> List[Finding]:
    lookup = _Lookup(policy)
    findings = []
    for constraint in constraints:
        for ident, perms in sorted(lookup.perms.items()):
            kind, source, target, cls = ident
            if kind != ALLOW or cls != constraint.trigger_class:
                continue
            triggered = perms & constraint.trigger_perms
            if not triggered:
                continue
            required_ok = bool(constraint.required_perms) and constraint.required_perms <= perms
            alt_perms = lookup.perms.get((ALLOW, source, target, constraint.alternative_class),
                                         frozenset())
            alternative_ok = (bool(constraint.alternative_perms)
                              and constraint.alternative_perms <= alt_perms)
            if required_ok or alternative_ok:
                continue
            unmet = []
            if constraint.required_perms:
                lacking = sorted(constraint.required_perms - perms)
                unmet.append(f"{' '.join(lacking)} on {cls} missing")
            if constraint.alternative_perms:
                lacking = sorted(constraint.alternative_perms - alt_perms)
                unmet.append(f"{' '.join(lacking)} on {constraint.alternative_class} missing")
            mapped = lookup.first[ident]
            findings.append(Finding(
                PLUGIN, "warning", mapped.location, mapped.rule.text(),
                f"grants {' '.join(sorted(triggered))} on {cls} but is ineffective: "
                + " and ".join(unmet)))
    return findings


class UnnecessaryRulesPlugin(Plugin):
    name = PLUGIN
    description = "find ineffective rule combinations, debug rules and ineffective permissions"

    CONSTRAINT_KEYS = {"trigger", "required", "alternative"}

    def configure(self, options: Options) -> UnnecessaryConfig:
        tuples = []
        raw_tuples = options.get("tuples", [], list)
        for i, lines in enumerate(raw_tuples):
            if not isinstance(lines, list) or not all(isinstance(x, str) for x in lines):
                raise options.error("tuples", f"entry {i} must be a list of statements")
            try:
                tuples.append(RuleTuple.parse(lines))
            except (ConfigError, PolicyError) as exc:
                raise options.error("tuples", f"entry {i}: {exc}") from None
        constraints = []
        for i, table in enumerate(options.get("constraints", [], list)):
            if not isinstance(table, dict) or set(table) - self.CONSTRAINT_KEYS or "trigger" not in table:
                raise options.error("constraints", f"entry {i} needs trigger/required/alternative")
            try:
                trigger_class, trigger = parse_class_perms(table["trigger"])
                required: FrozenSet[str] = frozenset()
                if "required" in table:
                    req_class, required = parse_class_perms(table["required"])
                    if req_class != trigger_class:
                        raise ConfigError("required permissions must use the trigger class")
                alt_class, alternative = None, frozenset()
                if "alternative" in table:
                    alt_class, alternative = parse_class_perms(table["alternative"])
                constraints.append(PermissionConstraint(trigger_class, trigger, required,
                                                        alt_class, alternative))
            except (ConfigError, PolicyError) as exc:
                raise options.error("constraints", f"entry {i}: {exc}") from None
        return UnnecessaryConfig(
            tuple(tuples),
            frozenset(options.strings("debug_types")),
            frozenset(options.strings("debug_guards", ("userdebug_or_eng", "eng"))),
            tuple(constraints),
        )

    def run(self, policy: Policy, settings: UnnecessaryConfig) -> List[Finding]:
        return (check_tuples(policy, settings.tuples)
                + check_debug(policy, settings.debug_types, settings.debug_guards)
                + check_ineffective_perms(policy, settings.constraints))
