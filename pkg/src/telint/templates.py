"""Rule templates with placeholders, matched against concrete rules.

A placeholder may be glued to literal text inside one token (`$2_socket`);
matching decomposes the concrete token and yields every consistent binding.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterator, List, Mapping, Optional, Pattern, Tuple, Union

from .model import AVRule, PolicyError, Rule, TERule, is_identifier

Segment = Union[str, int]
Binding = Mapping[int, str]


@dataclass(frozen=True)
class TokenPattern:
    segments: Tuple[Segment, ...]

    @property
    def variables(self) -> FrozenSet[int]:
        return frozenset(s for s in self.segments if isinstance(s, int))

    @property
    def literal(self) -> Optional[str]:
        if all(isinstance(s, str) for s in self.segments):
            return "".join(self.segments)  # type: ignore[arg-type]
        return None

    def render(self, binding: Binding) -> str:
        return "".join(s if isinstance(s, str) else binding[s] for s in self.segments)

    def match(self, value: str, binding: Binding) -> Iterator[Dict[int, str]]:
        yield from _match(self.segments, 0, value, 0, dict(binding))


def _match(segs: Tuple[Segment, ...], i: int, value: str, pos: int,
           binding: Dict[int, str]) -> Iterator[Dict[int, str]]:
    if i == len(segs):
        if pos == len(value):
            yield dict(binding)
        return
    seg = segs[i]
    if isinstance(seg, str):
        if value.startswith(seg, pos):
            yield from _match(segs, i + 1, value, pos + len(seg), binding)
        return
    bound = binding.get(seg)
    if bound is not None:
        if value.startswith(bound, pos):
            yield from _match(segs, i + 1, value, pos + len(bound), binding)
        return
    last = i == len(segs) - 1
    ends = [len(value)] if last else range(len(value), pos, -1)
    for end in ends:
        piece = value[pos:end]
        if not piece or not is_identifier(piece):
            continue
        binding[seg] = piece
        yield from _match(segs, i + 1, value, end, binding)
        del binding[seg]


def compile_token(token: str, placeholder: Pattern[str]) -> TokenPattern:
    segments: List[Segment] = []
    pos = 0
    for m in placeholder.finditer(token):
        if m.start() > pos:
            segments.append(token[pos:m.start()])
        segments.append(int(m.group(1)))
        pos = m.end()
    if pos < len(token):
        segments.append(token[pos:])
    return TokenPattern(tuple(segments))


@dataclass(frozen=True)
class RuleTemplate:
    kind: str
    source: TokenPattern
    target: TokenPattern
    security_class: TokenPattern
    permissions: FrozenSet[str] = frozenset()
    default_type: Optional[TokenPattern] = None
    name: Optional[str] = None

    @property
    def variables(self) -> FrozenSet[int]:
        found = self.source.variables | self.target.variables | self.security_class.variables
        if self.default_type is not None:
            found |= self.default_type.variables
        return found

    def fields(self) -> Tuple[TokenPattern, ...]:
        base = (self.source, self.target, self.security_class)
        return base + ((self.default_type,) if self.default_type is not None else ())

    def instantiate(self, binding: Binding) -> Rule:
        if self.kind == "type_transition":
            return TERule(self.source.render(binding), self.target.render(binding),
                          self.security_class.render(binding),
                          self.default_type.render(binding), self.name)
        return AVRule(self.kind, self.source.render(binding), self.target.render(binding),
                      self.security_class.render(binding), self.permissions)

    def bind(self, rule: Rule, binding: Binding = {}) -> Iterator[Dict[int, str]]:
        """Every extension of `binding` that makes this template's fields equal `rule`'s.

        Permissions are not compared here; callers decide what "found" means.
        """
        if rule.kind != self.kind:
            return
        if self.default_type is not None and rule.name != self.name:
            return
        values = [rule.source, rule.target, rule.security_class]
        if self.default_type is not None:
            values.append(rule.default_type)
        yield from _bind_fields(self.fields(), values, 0, dict(binding))

    def text(self, binding: Optional[Binding] = None) -> str:
        if binding is not None:
            return self.instantiate(binding).text()
        return f"<template {self.kind} {self.source} {self.target}>"


def _bind_fields(patterns, values, i, binding) -> Iterator[Dict[int, str]]:
    if i == len(patterns):
        yield binding
        return
    for extended in patterns[i].match(values[i], binding):
        yield from _bind_fields(patterns, values, i + 1, extended)


def template_from_rule(rule: Rule, placeholder: Pattern[str]) -> RuleTemplate:
    """Turn a rule whose identifiers carry placeholder text into a template."""
    if isinstance(rule, TERule):
        return RuleTemplate(
            rule.kind,
            compile_token(rule.source, placeholder),
            compile_token(rule.target, placeholder),
            compile_token(rule.security_class, placeholder),
            default_type=compile_token(rule.default_type, placeholder),
            name=rule.name,
        )
    for perm in rule.permissions:
        if placeholder.search(perm):
            raise PolicyError(f"placeholder in permission '{perm}' is not supported")
    return RuleTemplate(
        rule.kind,
        compile_token(rule.source, placeholder),
        compile_token(rule.target, placeholder),
        compile_token(rule.security_class, placeholder),
        permissions=frozenset(rule.permissions),
    )


# Placeholders are carried through parsing as ordinary identifiers.
SENTINEL = re.compile(r"__arg(\d)__")
_ARG_TEXT = re.compile(r"\$ARG(\d)")


def sentinel(index: int) -> str:
    return f"__arg{index}__"


def parse_template(text: str) -> RuleTemplate:
    """Parse one statement written with `$ARGn` placeholders."""
    from .syntax import parse_rule

    rule = parse_rule(_ARG_TEXT.sub(lambda m: sentinel(int(m.group(1))), text))
    if not isinstance(rule, (AVRule, TERule)):
        raise PolicyError(f"template must be an allow or type_transition rule: {text!r}")
    return template_from_rule(rule, SENTINEL)


def render_placeholders(template: RuleTemplate) -> str:
    text = template.instantiate({v: sentinel(v) for v in template.variables}).text()
    return SENTINEL.sub(lambda m: f"$ARG{m.group(1)}", text)
