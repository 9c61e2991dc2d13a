import pytest
from hypothesis import given, settings, strategies as st

from telint import m4
from telint.plugins.simple_macros import SimpleMacroConfig, select_macros, suggest_simple_macros
from telint.syntax import parse_rule

from helpers import R_DIR_MACROS, LOGD_RULE, policy

R_FILE = "define(`r_file_perms', `{ getattr open read ioctl lock }')\n"


def run(text, macros, threshold=0.8, **kw):
    p = policy(text, macros)
    return suggest_simple_macros(p, m4.permission_sets(p.macros),
                                 SimpleMacroConfig(threshold, **kw))


def expand_suggestion(suggestion, macros):
    text = m4.expand_text(suggestion, m4.parse_macro_file(macros))
    return parse_rule(text).permissions


class TestExamples:
    def test_r_dir_suggestion(self):
        [f] = run(LOGD_RULE, R_DIR_MACROS)
        assert f.suggestion == "allow logd rootfs:dir { r_dir_perms create };"
        assert f.score == 1.0
        assert f.location.line == 1

    def test_four_of_five_is_partial(self):
        [f] = run("allow a b:file { getattr open read ioctl };", R_FILE)
        assert f.score == pytest.approx(0.8)
        assert f.suggestion == "allow a b:file r_file_perms;"
        assert "lock" in f.message

    def test_single_permission(self):
        assert run("allow a b:dir search;", R_DIR_MACROS) == []

    def test_below_threshold(self):
        assert run("allow a b:file { getattr open read };", R_FILE) == []

    def test_rules_from_macro_usage_are_skipped(self):
        macros = R_DIR_MACROS + "define(`grant', `allow $1 $2:dir { open getattr read search ioctl };')\n"
        assert run("grant(a, b)", macros) == []

    def test_ignored_macros_and_rules(self):
        assert run(LOGD_RULE, R_DIR_MACROS, ignored_macros=frozenset({"r_dir_perms"})) == []
        assert run(LOGD_RULE, R_DIR_MACROS,
                   ignored_rules=frozenset({"allow logd rootfs:dir"})) == []

    def test_invalid_threshold(self):
        with pytest.raises(ValueError):
            SimpleMacroConfig(0.0)

    def test_greedy_takes_two_macros(self):
        macros = ("define(`m1', `{ a1 a2 a3 }')\ndefine(`m2', `{ b1 b2 }')\n")
        picks = select_macros(frozenset({"a1", "a2", "a3", "b1", "b2", "z"}),
                              m4.permission_sets(m4.parse_macro_file(macros)), 0.8)
        assert picks == [("m1", 1.0), ("m2", 1.0)]


class TestClassVocabulary:
    def test_macro_outside_class_vocabulary_is_not_offered(self, tmp_path):
        from telint.parser import load_source_dirs, parse_policy
        (tmp_path / "security_classes").write_text("class dir\nclass sock_file\n")
        (tmp_path / "access_vectors").write_text(
            "class dir { open getattr read search ioctl create }\n"
            "class sock_file { read write getattr open ioctl }\n")
        (tmp_path / "global_macros").write_text(R_DIR_MACROS)
        (tmp_path / "a.te").write_text(
            "type a;\ntype b;\nallow a b:dir { open getattr read search ioctl };\n"
            "allow a b:sock_file { open getattr read ioctl };\n")
        p = parse_policy(load_source_dirs([str(tmp_path)]))
        findings = suggest_simple_macros(p, m4.permission_sets(p.macros), SimpleMacroConfig())
        assert [f.location.line for f in findings] == [3]


PERMS = ["open", "getattr", "read", "search", "ioctl", "write", "create", "lock"]
MACRO_TABLES = st.dictionaries(
    st.sampled_from(["m_a", "m_b", "m_c"]),
    st.sets(st.sampled_from(PERMS), min_size=2, max_size=6), min_size=1)


def macro_text(table):
    return "".join(f"define(`{n}', `{{ {' '.join(sorted(p))} }}')\n" for n, p in table.items())


class TestProperties:
    @settings(max_examples=150, deadline=None)
    @given(MACRO_TABLES, st.sets(st.sampled_from(PERMS), min_size=1))
    def test_expansion_is_superset_and_exact_at_full_score(self, table, perms):
        macros = macro_text(table)
        rule = f"allow a b:file {{ {' '.join(sorted(perms))} }};"
        for f in run(rule, macros, threshold=0.5):
            expanded = expand_suggestion(f.suggestion, macros)
            assert expanded >= perms
            added = expanded - perms
            if f.score == 1.0:
                assert expanded == perms
            for p in added:
                assert p in f.message

    @settings(max_examples=150, deadline=None)
    @given(MACRO_TABLES, st.sets(st.sampled_from(PERMS), min_size=1),
           st.floats(0.05, 1.0), st.floats(0.05, 1.0))
    def test_threshold_monotonicity(self, table, perms, t1, t2):
        low, high = sorted((t1, t2))
        rule = f"allow a b:file {{ {' '.join(sorted(perms))} }};"
        macros = macro_text(table)
        at_high = {f.location for f in run(rule, macros, high)}
        at_low = {f.location for f in run(rule, macros, low)}
        assert at_high <= at_low
