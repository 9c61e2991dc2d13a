"""Independent reference implementations used as test oracles.

Nothing here imports scoring, matching or resolution code from the package;
each oracle is a direct transcription of the rule it checks.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import FrozenSet, Iterable, List, Mapping, Sequence, Set, Tuple

# Default bins, scores and tiers, typed in by hand.
RISK_BINS = {
    "user_app": (30, {"untrusted_app"}),
    "security_sensitive": (30, {"tee", "keystore", "security_file"}),
    "core_domains": (15, {"vold", "netd", "rild"}),
    "default_types": (30, {"device", "unlabeled", "system_file"}),
    "sensitive": (20, {"graphic_device"}),
}
TRUST_BINS = {
    "user_app": (0, {"untrusted_app"}),
    "security_sensitive": (30, {"tee", "keystore", "security_file"}),
    "core_domains": (20, {"vold", "netd", "rild"}),
    "default_types": (5, {"device", "unlabeled", "system_file"}),
    "sensitive": (10, {"graphic_device"}),
}
TIERS = {
    1.0: {"ioctl", "write", "execute"},
    0.9: {"read", "use", "fork"},
    0.5: {"search", "getattr", "lock"},
}
M = 60


def bin_score(name: str, bins: Mapping[str, Tuple[float, Set[str]]]) -> float:
    for score, members in bins.values():
        if name in members:
            return score
    return 0


def coefficient(perms: Iterable[str]) -> float:
    best = 0.0
    for p in perms:
        tier = [c for c, members in TIERS.items() if p in members]
        best = max(best, tier[0] if tier else 1.0)
    return best


def risk(source: str, target: str, cls: str, perms: Iterable[str], kind: str = "allow") -> float:
    """Risk formulas: transition, capability-on-self, or coefficient-weighted allow."""
    d = bin_score(source, RISK_BINS)
    type_name = source if target == "self" else target
    if kind == "type_transition":
        return (d + bin_score(type_name, RISK_BINS)) / M
    if cls == "capability" and target in ("self", source):
        return (d + 30) / M
    return (d + bin_score(type_name, RISK_BINS)) / M * coefficient(perms)


def trust(source: str, target: str, criterion: str) -> float:
    d = bin_score(source, TRUST_BINS)
    t = bin_score(source if target == "self" else target, TRUST_BINS)
    h = M / 2
    high_d, high_t = criterion[-2] == "h", criterion[-1] == "h"
    return ((d if high_d else h - d) + (t if high_t else h - t)) / M


# ---------------------------------------------------------------- neverallow


@dataclass(frozen=True)
class SetSpec:
    """Structured set expression: names minus excluded, optionally complemented or wildcard."""

    names: Tuple[str, ...] = ()
    excluded: Tuple[str, ...] = ()
    complement: bool = False
    wildcard: bool = False

    def render(self) -> str:
        parts = (["*"] if self.wildcard else []) + list(self.names)
        parts += [f"-{n}" for n in self.excluded]
        if len(parts) == 1 and not self.excluded:
            body = parts[0]
        else:
            body = "{ " + " ".join(parts) + " }"
        return "~" + body if self.complement else body


def resolve_types(spec: SetSpec, universe: Set[str],
                  attributes: Mapping[str, Set[str]]) -> Tuple[Set[str], bool]:
    def concrete(name: str) -> Set[str]:
        return set(attributes[name]) if name in attributes else {name}

    has_self = "self" in spec.names and not spec.complement
    base: Set[str] = set(universe) if spec.wildcard else set()
    for n in spec.names:
        if n != "self":
            base |= concrete(n)
    for n in spec.excluded:
        base -= concrete(n)
    if spec.complement:
        base = set(universe) - base
    return base, has_self


def neverallow_violations(
    rules: Sequence[Tuple[str, str, str, FrozenSet[str]]],
    universe: Set[str],
    attributes: Mapping[str, Set[str]],
    classes: Set[str],
    class_perms: Mapping[str, Set[str]],
    source: SetSpec, target: SetSpec, cls: SetSpec, perms: SetSpec,
) -> Set[Tuple[str, str, str, FrozenSet[str]]]:
    """Enumerate the full (source, target, class, permission) cross product of a spec."""
    sources, _ = resolve_types(source, universe, attributes)
    targets, target_self = resolve_types(target, universe, attributes)
    class_set = set(classes) if cls.wildcard else set(cls.names)
    class_set -= set(cls.excluded)
    if cls.complement:
        class_set = set(classes) - class_set
    all_perms = set().union(*class_perms.values(), *(r[3] for r in rules))
    perm_set = set(all_perms) if perms.wildcard else set(perms.names)
    perm_set -= set(perms.excluded)
    if perms.complement:
        perm_set = all_perms - perm_set
    forbidden = set(product(sources, targets, class_set, perm_set))
    if target_self:
        forbidden |= {(s, s, c, p) for s, c, p in product(sources, class_set, perm_set)}
    hits = set()
    for rule in rules:
        s, t, c, granted = rule
        effective = s if t == "self" else t
        if any((s, effective, c, p) in forbidden for p in granted):
            hits.add(rule)
    return hits


# ---------------------------------------------------------------- macros


def substitute(lines: Sequence[str], args: Sequence[str]) -> List[str]:
    """Plain positional substitution of `$n`, highest index first."""
    out = []
    for line in lines:
        for i in range(len(args), 0, -1):
            line = line.replace(f"${i}", args[i - 1])
        out.append(line)
    return out
