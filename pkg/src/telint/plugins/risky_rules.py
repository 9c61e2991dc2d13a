"""Score rules by risk, or by one of four trust-boundary criteria."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Mapping, Optional, Set, Tuple

from ..host import ConfigError, Finding, Options, Plugin, sort_findings
from ..model import ALLOW, SELF, AVRule, Policy, Rule, TERule

log = logging.getLogger(__name__)

RISK = "risk"
TRUST_CRITERIA = ("trust_hh", "trust_hl", "trust_lh", "trust_ll")
CRITERIA = (RISK,) + TRUST_CRITERIA
TIER_NAMES = ("perms_high", "perms_med", "perms_low")
CAPABILITY_CLASSES = frozenset({"capability", "capability2", "cap_userns", "cap2_userns"})


class UnbinnedError(ConfigError):
    pass


@dataclass(frozen=True)
class BinDefinition:
    name: str
    members: FrozenSet[str]
    risk_score: float
    trust_score: float


@dataclass(frozen=True)
class PermissionTier:
    name: str
    permissions: FrozenSet[str]
    coefficient: float


@dataclass(frozen=True)
class ScoringConfig:
    bins: Tuple[BinDefinition, ...] = ()
    tiers: Tuple[PermissionTier, ...] = ()
    max_partial: float = 30.0
    criterion: str = RISK
    capability_score: Optional[float] = None
    capability_classes: FrozenSet[str] = CAPABILITY_CLASSES
    unbinned_policy: str = "warn"
    min_score: float = 0.0

    def __post_init__(self) -> None:
        if self.capability_score is None:
            object.__setattr__(self, "capability_score", self.max_partial)
        validate(self)

    @property
    def normalizer(self) -> float:
        return 2 * self.max_partial


def validate(cfg: ScoringConfig) -> None:
    if cfg.criterion not in CRITERIA:
        raise ConfigError(f"criterion must be one of {', '.join(CRITERIA)}")
    if cfg.max_partial <= 0:
        raise ConfigError("max_partial must be positive")
    if not 0 <= cfg.capability_score <= cfg.max_partial:
        raise ConfigError("capability_score must lie in [0, max_partial]")
    if cfg.unbinned_policy not in ("warn", "error"):
        raise ConfigError("unbinned_policy must be 'warn' or 'error'")
    owner: Dict[str, str] = {}
    for b in cfg.bins:
        for score in (b.risk_score, b.trust_score):
            if not 0 <= score <= cfg.max_partial:
                raise ConfigError(f"bin {b.name}: score {score} outside [0, {cfg.max_partial}]")
        for member in b.members:
            if member in owner:
                raise ConfigError(f"'{member}' belongs to bins {owner[member]} and {b.name}")
            owner[member] = b.name
    seen: Dict[str, str] = {}
    for tier in cfg.tiers:
        if tier.name not in TIER_NAMES:
            raise ConfigError(f"unknown permission tier '{tier.name}'")
        if not 0 < tier.coefficient <= 1:
            raise ConfigError(f"tier {tier.name}: coefficient must be in (0, 1]")
        for perm in tier.permissions:
            if perm in seen:
                raise ConfigError(f"permission '{perm}' is in tiers {seen[perm]} and {tier.name}")
            seen[perm] = tier.name
    coefficients = {t.name: t.coefficient for t in cfg.tiers}
    ordered = [coefficients[n] for n in TIER_NAMES if n in coefficients]
    if ordered != sorted(ordered, reverse=True):
        raise ConfigError("tier coefficients must satisfy perms_high >= perms_med >= perms_low")


@dataclass
class Scorer:
    cfg: ScoringConfig
    attributes: Mapping[str, FrozenSet[str]] = field(default_factory=dict)
    warned: Set[str] = field(default_factory=set)

    def __post_init__(self) -> None:
        self.bin_of: Dict[str, BinDefinition] = {}
        via_attribute: Dict[str, BinDefinition] = {}
        for b in self.cfg.bins:
            for member in b.members:
                self.bin_of[member] = b
                for type_name in self.attributes.get(member, ()):
                    prior = via_attribute.get(type_name)
                    if prior is not None and prior.name != b.name:
                        raise ConfigError(
                            f"'{type_name}' belongs to bins {prior.name} and {b.name} "
                            f"through attribute membership")
                    via_attribute[type_name] = b
        for type_name, b in via_attribute.items():
            self.bin_of.setdefault(type_name, b)
        self.coefficient_of: Dict[str, float] = {}
        for tier in self.cfg.tiers:
            for perm in tier.permissions:
                self.coefficient_of[perm] = tier.coefficient

    def _warn_once(self, key: str, message: str) -> None:
        if key not in self.warned:
            self.warned.add(key)
            log.warning("%s", message)

    def partial(self, ident: str, dimension: str) -> float:
        b = self.bin_of.get(ident)
        if b is None:
            if self.cfg.unbinned_policy == "error":
                raise UnbinnedError(f"'{ident}' is not in any bin")
            self._warn_once(f"id:{ident}", f"risky_rules: '{ident}' is not in any bin; scored 0")
            return 0.0
        return b.risk_score if dimension == RISK else b.trust_score

    def coefficient(self, perms: FrozenSet[str]) -> float:
        best = 0.0
        for perm in perms:
            c = self.coefficient_of.get(perm)
            if c is None:
                self._warn_once(f"perm:{perm}",
                                f"risky_rules: permission '{perm}' is in no tier; coefficient 1")
                c = 1.0
            best = max(best, c)
        return best

    def _type_of(self, rule: Rule) -> str:
        return rule.source if rule.target == SELF else rule.target

    def is_capability(self, rule: Rule) -> bool:
        return (isinstance(rule, AVRule) and rule.security_class in self.cfg.capability_classes
                and rule.target in (SELF, rule.source))

    def risk(self, rule: Rule) -> float:
        m = self.cfg.normalizer
        domain = self.partial(rule.source, RISK)
        if isinstance(rule, TERule):
            return (domain + self.partial(rule.target, RISK)) / m
        if self.is_capability(rule):
            return (domain + self.cfg.capability_score) / m
        return (domain + self.partial(self._type_of(rule), RISK)) / m * self.coefficient(
            rule.permissions)

    def trust(self, rule: Rule, criterion: str) -> float:
        m = self.cfg.normalizer
        half = m / 2
        d = self.partial(rule.source, "trust")
        t = self.partial(self._type_of(rule), "trust")
        if criterion == "trust_hh":
            return (d + t) / m
        if criterion == "trust_hl":
            return (d + (half - t)) / m
        if criterion == "trust_lh":
            return ((half - d) + t) / m
        if criterion == "trust_ll":
            return ((half - d) + (half - t)) / m
        raise ValueError(f"unknown trust criterion {criterion!r}")

    def score(self, rule: Rule) -> float:
        if self.cfg.criterion == RISK:
            return self.risk(rule)
        return self.trust(rule, self.cfg.criterion)


def partial_score(ident: str, cfg: ScoringConfig, dimension: str = RISK) -> float:
    return Scorer(cfg).partial(ident, dimension)


def score_risk(rule: Rule, cfg: ScoringConfig) -> float:
    return Scorer(cfg).risk(rule)


def score_trust(rule: Rule, cfg: ScoringConfig, criterion: Optional[str] = None) -> float:
    return Scorer(cfg).trust(rule, criterion or cfg.criterion)


def score_policy(policy: Policy, cfg: ScoringConfig) -> List[Finding]:
    """One finding per allow/type_transition rule of the expanded view, highest first."""
    scorer = Scorer(cfg, policy.attributes)
    findings = []
    for mapped in policy.expanded_rules:
        rule = mapped.rule
        if isinstance(rule, AVRule) and rule.kind != ALLOW:
            continue
        score = min(1.0, max(0.0, scorer.score(rule)))
        if score + 1e-12 < cfg.min_score:
            continue
        findings.append(Finding("risky_rules", "info", mapped.location, rule.text(), "", score))
    return sort_findings(findings)


def _number(options: Options, table: Mapping, key: str, where: str) -> float:
    value = table.get(key)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise options.error(where, f"'{key}' must be a number")
    return float(value)


def _names(options: Options, table: Mapping, key: str, where: str) -> FrozenSet[str]:
    value = table.get(key, [])
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise options.error(where, f"'{key}' must be a list of names")
    return frozenset(value)


class RiskyRulesPlugin(Plugin):
    name = "risky_rules"
    description = "score rules by risk or trust-boundary criteria using configurable bins"

    BIN_KEYS = {"risk", "trust", "members", "curated_members"}
    TIER_KEYS = {"coefficient", "permissions", "curated_permissions"}

    def configure(self, options: Options) -> ScoringConfig:
        bins = []
        for name, table in sorted(options.get("bins", {}, dict).items()):
            where = f"bins.{name}"
            if not isinstance(table, dict) or set(table) - self.BIN_KEYS:
                raise options.error(where, f"bin keys are {', '.join(sorted(self.BIN_KEYS))}")
            members = _names(options, table, "members", where)
            members |= _names(options, table, "curated_members", where)
            bins.append(BinDefinition(name, members, _number(options, table, "risk", where),
                                      _number(options, table, "trust", where)))
        tiers = []
        for name, table in sorted(options.get("tiers", {}, dict).items()):
            where = f"tiers.{name}"
            if not isinstance(table, dict) or set(table) - self.TIER_KEYS:
                raise options.error(where, f"tier keys are {', '.join(sorted(self.TIER_KEYS))}")
            perms = _names(options, table, "permissions", where)
            perms |= _names(options, table, "curated_permissions", where)
            tiers.append(PermissionTier(name, perms,
                                        _number(options, table, "coefficient", where)))
        max_partial = options.get("max_partial", 30.0, float)
        capability = options.get("capability_score", None, (int, float))
        try:
            return ScoringConfig(
                bins=tuple(bins),
                tiers=tuple(tiers),
                max_partial=max_partial,
                criterion=options.get("criterion", RISK, str),
                capability_score=None if capability is None else float(capability),
                capability_classes=frozenset(
                    options.strings("capability_classes", sorted(CAPABILITY_CLASSES))),
                unbinned_policy=options.get("unbinned_policy", "warn", str),
                min_score=options.get("min_score", 0.0, float),
            )
        except ConfigError as exc:
            raise ConfigError(f"{options.config.source}: [risky_rules] {exc}") from None

    def run(self, policy: Policy, settings: ScoringConfig) -> List[Finding]:
        return score_policy(policy, settings)
