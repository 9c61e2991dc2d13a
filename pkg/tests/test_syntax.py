import pytest

from telint.model import AVRule, NeverallowRule, PolicyError, TERule, TypeSet
from telint.syntax import IDENT, PUNCT, QUOTED, STRING, parse_rule, parse_rules, tokenize


class TestTokenize:
    def test_kinds_and_lines(self):
        toks = tokenize('allow a b:file read; # note\ntype_transition a b:file c "n";')
        assert [t.kind for t in toks[:6]] == [IDENT, IDENT, IDENT, PUNCT, IDENT, IDENT]
        assert toks[-2].kind == STRING and toks[-2].value == "n"
        assert toks[-2].line == 2

    def test_comments_dropped(self):
        assert [t.value for t in tokenize("# all of this\nx")] == ["x"]

    def test_nested_quotes(self):
        [tok] = tokenize("`outer `inner' text'")
        assert tok.kind == QUOTED and tok.value == "outer `inner' text"

    def test_unbalanced_quote(self):
        with pytest.raises(PolicyError):
            tokenize("`never closed")


class TestParseRules:
    def test_braced_sets_split_into_concrete_rules(self):
        rules = parse_rules("allow { a b } { c d }:{ file dir } read;")
        assert len(rules) == 8
        assert all(isinstance(r, AVRule) for r in rules)

    def test_type_transition_with_name(self):
        [rule] = parse_rules('type_transition a b:file c "name";')
        assert rule == TERule("a", "b", "file", "c", "name")

    def test_declarations_ignored(self):
        assert parse_rules("type a; attribute x;") == []

    @pytest.mark.parametrize("text", [
        "allow ~a b:file read;",
        "allow * b:file read;",
        "allow { a -b } c:file read;",
    ])
    def test_set_operators_rejected_in_allow(self, text):
        with pytest.raises(PolicyError):
            parse_rules(text)

    def test_missing_colon_is_error(self):
        with pytest.raises(PolicyError):
            parse_rule("type_transition a b file c;")


class TestNeverallow:
    def test_complement_wildcard_and_exclusion(self):
        rule = parse_rule("neverallow ~{ a b } { * -c }:dir *;")
        assert isinstance(rule, NeverallowRule)
        assert rule.source == TypeSet(frozenset({"a", "b"}), complement=True)
        assert rule.target == TypeSet(excluded=frozenset({"c"}), wildcard=True)
        assert rule.permissions.wildcard

    def test_exclusion_only_means_everything_but(self):
        rule = parse_rule("neverallow { -a } b:file read;")
        assert rule.source.wildcard and rule.source.excluded == {"a"}

    def test_text_round_trip(self):
        text = "neverallow ~{ a b } { * -c }:dir *;"
        assert parse_rule(parse_rule(text).text()) == parse_rule(text)
