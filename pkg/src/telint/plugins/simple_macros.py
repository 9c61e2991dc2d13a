"""Suggest permission-set macros in place of individually listed permissions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import FrozenSet, List, Mapping, Optional, Tuple

from .. import m4
from ..host import Finding, Options, Plugin
from ..model import ALLOW, AVRule, MappedRule, Policy

EPSILON = 1e-9


@dataclass(frozen=True)
class SimpleMacroConfig:
    threshold: float = 0.8
    ignored_macros: FrozenSet[str] = frozenset()
    ignored_rules: FrozenSet[str] = frozenset()

    def __post_init__(self) -> None:
        if not 0.0 < self.threshold <= 1.0:
            raise ValueError("threshold must be in (0, 1]")


def select_macros(
    perms: FrozenSet[str],
    macros: Mapping[str, FrozenSet[str]],
    threshold: float,
) -> List[Tuple[str, float]]:
    """Greedy cover of `perms` by macros scoring at least `threshold`.

    Each round scores the remaining macros against the permissions not yet
    covered and takes the best by (score, macro size, name).
    """
    uncovered = set(perms)
    picks: List[Tuple[str, float]] = []
    remaining = dict(macros)
    while uncovered and remaining:
        best: Optional[tuple] = None
        for name, mperms in remaining.items():
            if not mperms:
                continue
            score = len(uncovered & mperms) / len(mperms)
            if score <= 0 or score < threshold - EPSILON:
                continue
            rank = (-score, -len(mperms), name)
            if best is None or rank < best[0]:
                best = (rank, name, score)
        if best is None:
            break
        _, name, score = best
        picks.append((name, score))
        uncovered -= remaining.pop(name)
    return picks


def _suggest(mapped: MappedRule, macros: Mapping[str, FrozenSet[str]],
             cfg: SimpleMacroConfig) -> Optional[Finding]:
    rule = mapped.rule
    picks = select_macros(rule.permissions, macros, cfg.threshold)
    if not picks:
        return None
    covered = frozenset().union(*(macros[name] for name, _ in picks))
    residual = sorted(rule.permissions - covered)
    tokens = [name for name, _ in picks] + residual
    written = len(mapped.written_perms) or len(rule.permissions)
    if len(tokens) >= written:
        return None
    body = tokens[0] if len(tokens) == 1 else "{ " + " ".join(tokens) + " }"
    suggestion = f"allow {rule.source} {rule.target}:{rule.security_class} {body};"
    added = sorted(covered - rule.permissions)
    score = min(s for _, s in picks)
    names = ", ".join(name for name, _ in picks)
    if added:
        message = (f"partial match with {names}; the suggestion also grants "
                   f"{' '.join(added)}, which the rule does not grant")
    else:
        message = f"permissions can be written with {names}"
    return Finding("simple_macros", "suggestion", mapped.location, rule.text(),
                   message, score, suggestion)


def suggest_simple_macros(
    policy: Policy,
    macros: Mapping[str, FrozenSet[str]],
    cfg: SimpleMacroConfig,
) -> List[Finding]:
    """Findings for allow rules whose permissions a permission-set macro can express.

    Works on the unexpanded view; rules produced by a macro usage are skipped.
    """
    usable = {n: p for n, p in macros.items() if n not in cfg.ignored_macros and p}
    findings = []
    for mapped in policy.rules:
        rule = mapped.rule
        if not isinstance(rule, AVRule) or rule.kind != ALLOW or mapped.via_macro is not None:
            continue
        if rule.key in cfg.ignored_rules:
            continue
        vocabulary = policy.known_permissions(rule.security_class)
        if vocabulary:
            candidates = {n: p for n, p in usable.items() if p <= vocabulary}
        else:
            candidates = usable
        finding = _suggest(mapped, candidates, cfg)
        if finding is not None:
            findings.append(finding)
    return findings


class SimpleMacrosPlugin(Plugin):
    name = "simple_macros"
    description = "suggest permission-set macros for individually listed permissions"

    def configure(self, options: Options) -> SimpleMacroConfig:
        threshold = options.get("threshold", 0.8, float)
        if not 0.0 < threshold <= 1.0:
            raise options.error("threshold", "must be in (0, 1]")
        return SimpleMacroConfig(
            threshold,
            frozenset(options.strings("ignored_macros")),
            frozenset(options.strings("ignored_rules")),
        )

    def run(self, policy: Policy, settings: SimpleMacroConfig) -> List[Finding]:
        return suggest_simple_macros(policy, m4.permission_sets(policy.macros), settings)
