"""Suggest rule-block macro usages for groups of literal rules.

The search is exact. Expansion rules are turned into templates by expanding each
macro with placeholder arguments; argument values are then drawn only from
policy rules that match a template, so candidates for later arguments are
conditioned on the values already chosen.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

from .. import m4
from ..host import Finding, Options, Plugin
from ..model import (
    AVRule, MappedRule, Policy, PolicyError, Rule, TERule,
)
from ..syntax import parse_rules
from ..templates import SENTINEL, RuleTemplate, sentinel, template_from_rule

log = logging.getLogger(__name__)

PLUGIN = "parametrized_macros"
EPSILON = 1e-9
DEFAULT_CAP = 10 ** 7


@dataclass(frozen=True)
class ArgumentBinding:
    macro: m4.MacroDefinition
    values: Tuple[str, ...]
    score: float
    found: Tuple[Rule, ...] = field(default=(), compare=False)
    missing: Tuple[Rule, ...] = field(default=(), compare=False)

    def usage(self) -> str:
        return f"{self.macro.name}({', '.join(self.values)})"


@dataclass(frozen=True)
class ParametrizedConfig:
    threshold: float = 0.8
    binding_cap: int = DEFAULT_CAP
    ignored_macros: FrozenSet[str] = frozenset()


def literal_rules(policy: Policy) -> List[MappedRule]:
    """Rules written out in the source: not produced by a macro usage, not guarded."""
    return [m for m in policy.rules
            if isinstance(m.rule, (AVRule, TERule)) and m.via_macro is None and m.guard is None]


class RuleIndex:
    """Literal rules, aggregated per key, indexed by field value."""

    def __init__(self, rules: Iterable[MappedRule]):
        self.mapped: Dict[tuple, List[MappedRule]] = {}
        perms: Dict[tuple, Set[str]] = {}
        transitions: Dict[TERule, None] = {}
        for m in rules:
            rule = m.rule
            if isinstance(rule, AVRule):
                ident = (rule.kind, rule.source, rule.target, rule.security_class)
                perms.setdefault(ident, set()).update(rule.permissions)
                self.mapped.setdefault(ident, []).append(m)
            else:
                transitions.setdefault(rule)
                self.mapped.setdefault(("te", rule), []).append(m)
        self.perms = {k: frozenset(v) for k, v in perms.items()}
        self.transitions = frozenset(transitions)
        self.entries: Dict[str, List[Rule]] = {}
        self.by_field: Dict[tuple, List[Rule]] = {}
        entries = [AVRule(*k, v) for k, v in sorted(self.perms.items())]
        entries += sorted(transitions, key=lambda r: r.text())
        for rule in entries:
            self.entries.setdefault(rule.kind, []).append(rule)
            values = [rule.source, rule.target, rule.security_class]
            if isinstance(rule, TERule):
                values.append(rule.default_type)
            for i, value in enumerate(values):
                self.by_field.setdefault((rule.kind, i, value), []).append(rule)

    def is_found(self, rule: Rule) -> bool:
        if isinstance(rule, TERule):
            return rule in self.transitions
        granted = self.perms.get((rule.kind, rule.source, rule.target, rule.security_class))
        return granted is not None and rule.permissions <= granted

    def granted(self, rule: AVRule) -> FrozenSet[str]:
        return self.perms.get((rule.kind, rule.source, rule.target, rule.security_class),
                              frozenset())

    def sources(self, rule: Rule) -> List[MappedRule]:
        if isinstance(rule, TERule):
            return self.mapped.get(("te", rule), [])
        return self.mapped.get((rule.kind, rule.source, rule.target, rule.security_class), [])

    def candidates(self, template: RuleTemplate, binding: Mapping[int, str]) -> List[Rule]:
        best: Optional[List[Rule]] = None
        for i, pattern in enumerate(template.fields()):
            if pattern.variables <= binding.keys():
                found = self.by_field.get((template.kind, i, pattern.render(binding)), [])
                if best is None or len(found) < len(best):
                    best = found
        pool = self.entries.get(template.kind, []) if best is None else best
        if template.kind == TERule.kind:
            return pool
        return [r for r in pool if template.permissions <= r.permissions]


def macro_templates(definition: m4.MacroDefinition,
                    table: Mapping[str, m4.MacroDefinition]) -> List[RuleTemplate]:
    """Templates for the rules a rule-block macro produces, in body order."""
    args = [sentinel(i) for i in range(1, definition.arity + 1)]
    text = m4.expand_call(definition, args, table)
    return [template_from_rule(r, SENTINEL) for r in parse_rules(text)]


def _order(templates: Sequence[RuleTemplate]) -> List[int]:
    """Anchor first (most distinct arguments, ties to body order), then by overlap."""
    remaining = list(range(len(templates)))
    order: List[int] = []
    bound: Set[int] = set()
    while remaining:
        pick = min(remaining, key=lambda i: (-len(templates[i].variables & bound),
                                             -len(templates[i].variables), i))
        remaining.remove(pick)
        order.append(pick)
        bound |= templates[pick].variables
    return order


class SearchTruncated(Exception):
    pass


def _max_misses(total: int, threshold: float) -> int:
    return next(m for m in range(total, -1, -1) if (total - m) / total >= threshold - EPSILON)


def candidate_bindings(templates: Sequence[RuleTemplate], arity: int, index: RuleIndex,
                       threshold: float, cap: int = DEFAULT_CAP) -> Tuple[Set[Tuple[str, ...]], bool]:
    """Every full binding that can reach `threshold`, plus a truncation flag.

    Each template is either found (its arguments then come from a matching policy
    rule) or missed, and at most `budget` misses are allowed. A binding whose
    arguments all occur in found templates is therefore reached by the path that
    follows its own found/missed pattern, which keeps the search exact.
    """
    if not templates:
        return set(), False
    order = _order(templates)
    budget = _max_misses(len(templates), threshold)
    wanted = set(range(1, arity + 1))
    results: Set[Tuple[str, ...]] = set()
    examined = 0

    def walk(pos: int, binding: Dict[int, str], misses: int) -> None:
        nonlocal examined
        if pos == len(order):
            if binding.keys() >= wanted:
                results.add(tuple(binding[i] for i in range(1, arity + 1)))
            return
        template = templates[order[pos]]
        if template.variables <= binding.keys():
            found = index.is_found(template.instantiate(binding))
            if found or misses < budget:
                walk(pos + 1, binding, misses + (0 if found else 1))
            return
        for rule in index.candidates(template, binding):
            for extended in template.bind(rule, binding):
                examined += 1
                if examined > cap:
                    raise SearchTruncated
                walk(pos + 1, extended, misses)
        if misses < budget:
            walk(pos + 1, binding, misses + 1)

    try:
        walk(0, {}, 0)
    except SearchTruncated:
        return results, True
    return results, False


def score_binding(definition: m4.MacroDefinition, templates: Sequence[RuleTemplate],
                  values: Tuple[str, ...], index: RuleIndex) -> ArgumentBinding:
    binding = dict(enumerate(values, start=1))
    found, missing = [], []
    for template in templates:
        rule = template.instantiate(binding)
        (found if index.is_found(rule) else missing).append(rule)
    return ArgumentBinding(definition, values, len(found) / len(templates),
                           tuple(found), tuple(missing))


def _covered(templates: Sequence[RuleTemplate], binding: ArgumentBinding,
             index: RuleIndex) -> bool:
    """Every argument occurs in at least one found expansion rule."""
    values = dict(enumerate(binding.values, start=1))
    seen: Set[int] = set()
    for template in templates:
        if index.is_found(template.instantiate(values)):
            seen |= template.variables
    return seen >= set(values)


def search_bindings(policy: Policy, definition: m4.MacroDefinition,
                    table: Mapping[str, m4.MacroDefinition], threshold: float,
                    cap: int = DEFAULT_CAP, index: Optional[RuleIndex] = None,
                    ) -> Tuple[List[ArgumentBinding], bool]:
    """Bindings of one macro scoring at least `threshold`; the flag reports truncation."""
    index = index or RuleIndex(literal_rules(policy))
    templates = macro_templates(definition, table)
    if not templates:
        return [], False
    values, truncated = candidate_bindings(templates, definition.arity, index, threshold, cap)
    bindings = []
    for vals in values:
        if any(v in table for v in vals):
            continue
        scored = score_binding(definition, templates, vals, index)
        if scored.score >= threshold - EPSILON and _covered(templates, scored, index):
            bindings.append(scored)
    bindings.sort(key=lambda b: (-b.score, b.values))
    return bindings, truncated


def _pieces(identifier: str) -> Set[str]:
    parts = identifier.split("_")
    found = set()
    for i in range(len(parts)):
        for j in range(i + 1, len(parts) + 1):
            piece = "_".join(parts[i:j])
            if piece:
                found.add(piece)
    return found


def brute_force_bindings(policy: Policy, definition: m4.MacroDefinition,
                         table: Mapping[str, m4.MacroDefinition],
                         threshold: float) -> List[Tuple[Tuple[str, ...], float]]:
    """Test oracle: try every argument tuple over identifiers seen in the policy.

    Each candidate is expanded by the macro engine and checked rule by rule,
    without templates. Small fixtures only.
    """
    literal = literal_rules(policy)
    granted: Dict[tuple, Set[str]] = {}
    transitions = set()
    universe: Set[str] = set()
    for m in literal:
        rule = m.rule
        names = [rule.source, rule.target, rule.security_class]
        if isinstance(rule, TERule):
            names.append(rule.default_type)
            transitions.add(rule)
        else:
            granted.setdefault((rule.kind, rule.source, rule.target, rule.security_class),
                               set()).update(rule.permissions)
        for name in names:
            universe |= _pieces(name)
    universe -= set(table)

    def found(rule: Rule) -> bool:
        if isinstance(rule, TERule):
            return rule in transitions
        have = granted.get((rule.kind, rule.source, rule.target, rule.security_class), set())
        return rule.permissions <= have

    def produce(args: Sequence[str]) -> List[Rule]:
        return parse_rules(m4.expand_call(definition, args, table))

    results = []
    fresh = "zz_unused_value"
    for args in itertools.product(sorted(universe), repeat=definition.arity):
        rules = produce(args)
        if not rules:
            continue
        hits = [found(r) for r in rules]
        score = sum(hits) / len(rules)
        if score < threshold - EPSILON:
            continue
        covered = True
        for k in range(definition.arity):
            probe = produce(args[:k] + (fresh,) + args[k + 1:])
            if not any(hit and a != b for hit, a, b in zip(hits, rules, probe)):
                covered = False
                break
        if covered:
            results.append((args, score))
    results.sort(key=lambda r: (-r[1], r[0]))
    return results


def _finding(binding: ArgumentBinding, index: RuleIndex) -> Finding:
    matched: List[MappedRule] = []
    for rule in binding.found:
        for m in index.sources(rule):
            if m not in matched:
                matched.append(m)
    matched.sort(key=lambda m: m.location)
    covered: Dict[tuple, Set[str]] = {}
    for rule in binding.found:
        if isinstance(rule, AVRule):
            covered.setdefault((rule.kind, rule.source, rule.target, rule.security_class),
                               set()).update(rule.permissions)
    residual = []
    for ident, perms in sorted(covered.items()):
        extra = sorted(index.perms[ident] - perms)
        if extra:
            residual.append(f"{ident[1]} {ident[2]}:{ident[3]} {' '.join(extra)}")
    lines = [f"replaces {len(matched)} rule(s):"]
    lines += [f"  {m.location}: {m.rule.text()}" for m in matched]
    if binding.missing:
        lines.append(f"also grants {len(binding.missing)} rule(s) not in the policy:")
        lines += [f"  {r.text()}" for r in binding.missing]
    if residual:
        lines.append("keep explicit permissions not covered by the macro:")
        lines += [f"  {r}" for r in residual]
    first = matched[0]
    return Finding(PLUGIN, "suggestion", first.location, first.rule.text(),
                   "\n".join(lines), binding.score, binding.usage())


def suggest_parametrized_macros(policy: Policy, macros: Mapping[str, m4.MacroDefinition],
                                cfg: ParametrizedConfig = ParametrizedConfig()) -> List[Finding]:
    index = RuleIndex(literal_rules(policy))
    existing = {(u.name, u.args) for u in policy.macro_usages}
    findings = []
    for name in sorted(macros):
        definition = macros[name]
        if definition.kind != m4.RULE_BLOCK or name in cfg.ignored_macros:
            continue
        try:
            bindings, truncated = search_bindings(policy, definition, macros, cfg.threshold,
                                                  cfg.binding_cap, index)
        except PolicyError as exc:
            log.warning("parametrized_macros: skipping macro '%s': %s", name, exc)
            continue
        if truncated:
            log.warning("parametrized_macros: search for '%s' stopped after %d bindings; "
                        "results are incomplete", name, cfg.binding_cap)
            findings.append(Finding(
                PLUGIN, "warning", definition.origin, f"define(`{name}')",
                f"search truncated after {cfg.binding_cap} bindings; raise binding_cap "
                f"for complete results"))
        for binding in bindings:
            if (name, binding.values) not in existing:
                findings.append(_finding(binding, index))
    return findings


class ParametrizedMacrosPlugin(Plugin):
    name = PLUGIN
    description = "suggest rule-block macro usages with concrete arguments"

    def configure(self, options: Options) -> ParametrizedConfig:
        threshold = options.get("threshold", 0.8, float)
        if not 0.0 < threshold <= 1.0:
            raise options.error("threshold", "must be in (0, 1]")
        cap = options.get("binding_cap", DEFAULT_CAP, int)
        if isinstance(cap, bool) or cap < 1:
            raise options.error("binding_cap", "must be a positive integer")
        return ParametrizedConfig(threshold, cap, frozenset(options.strings("ignored_macros")))

    def run(self, policy: Policy, settings: ParametrizedConfig) -> List[Finding]:
        return suggest_parametrized_macros(policy, policy.macros, settings)
