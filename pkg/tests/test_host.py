import json

import pytest

from telint.host import (
    ConfigError, Finding, Plugin, PluginFailure, Profile, format_findings, load_plugin_config,
    load_profile, run_profile, sort_findings,
)
from telint.model import SourceLocation
from telint.plugins import REGISTRY

from helpers import R_DIR_MACROS, LOGD_RULE, policy


def finding(score=None, file="a.te", line=1, rule="allow a b:file read;", **kw):
    return Finding(kw.pop("plugin", "p"), kw.pop("severity", "info"),
                   SourceLocation(file, line), rule, score=score, **kw)


class TestFinding:
    def test_score_range(self):
        with pytest.raises(ValueError):
            finding(score=1.5)

    def test_unknown_severity(self):
        with pytest.raises(ValueError):
            finding(severity="fatal")

    def test_ordering(self):
        items = [finding(None, "a.te", 1), finding(0.5, "b.te", 2), finding(1.0, "z.te", 9),
                 finding(0.5, "a.te", 7), finding(0.5, "a.te", 7, rule="allow a a:file read;")]
        ordered = sort_findings(items)
        assert [(f.score, f.location.file, f.location.line, f.rule_text[:9]) for f in ordered] == [
            (1.0, "z.te", 9, "allow a b"), (0.5, "a.te", 7, "allow a a"),
            (0.5, "a.te", 7, "allow a b"), (0.5, "b.te", 2, "allow a b"),
            (None, "a.te", 1, "allow a b")]


class TestFormat:
    def test_scored_line(self):
        out = format_findings([finding(1.0, ".../domain.te", 104,
                                       "allow untrusted_app system_file:file execute;")])
        assert out == "1.00: .../domain.te:104: allow untrusted_app system_file:file execute;\n"

    def test_unscored_line_with_message_and_suggestion(self):
        out = format_findings([finding(message="why", suggestion="allow a b:file write;")])
        assert out.splitlines() == ["a.te:1: allow a b:file read;", "    [p] why",
                                    "    suggestion:", "        allow a b:file write;"]

    def test_empty(self):
        assert format_findings([], "text") == format_findings([], "machine") == ""

    def test_machine_records(self):
        out = format_findings([finding(0.25, message="m"), finding()], "machine")
        records = [json.loads(line) for line in out.splitlines()]
        assert records[0] == {"plugin": "p", "severity": "info", "score": 0.25, "file": "a.te",
                              "line": 1, "rule": "allow a b:file read;", "message": "m",
                              "suggestion": None}
        assert records[1]["score"] is None


class TestConfig:
    def test_builtin_configs_load(self):
        for name in REGISTRY:
            cfg = load_plugin_config(name, None)
            assert cfg.plugin == name

    def test_unknown_key_names_key_and_file(self, tmp_path):
        path = tmp_path / "sm.toml"
        path.write_text("[simple_macros]\nthreshold = 0.9\nbogus = 1\n")
        profile = Profile("t", ("simple_macros",), {"simple_macros": str(path)})
        with pytest.raises(ConfigError) as err:
            run_profile(policy(LOGD_RULE, R_DIR_MACROS), profile)
        assert "bogus" in str(err.value) and str(path) in str(err.value)

    def test_config_errors_abort_before_any_plugin_runs(self, tmp_path, monkeypatch):
        ran = []
        monkeypatch.setattr(REGISTRY["simple_macros"], "run",
                            lambda self, p, s: ran.append(1) or [])
        bad = tmp_path / "rr.toml"
        bad.write_text("[risky_rules]\ncriterion = 'nope'\n")
        profile = Profile("t", ("simple_macros", "risky_rules"), {"risky_rules": str(bad)})
        with pytest.raises(ConfigError):
            run_profile(policy(LOGD_RULE, R_DIR_MACROS), profile)
        assert ran == []

    def test_wrong_section(self, tmp_path):
        path = tmp_path / "x.toml"
        path.write_text("[risky_rules]\n")
        with pytest.raises(ConfigError, match="unexpected section"):
            load_plugin_config("simple_macros", path)

    def test_bad_toml(self, tmp_path):
        path = tmp_path / "x.toml"
        path.write_text("[simple_macros\n")
        with pytest.raises(ConfigError, match=str(path)):
            load_plugin_config("simple_macros", path)


class TestProfile:
    def test_builtin_profile(self):
        profile = load_profile()
        assert "parametrized_macros" not in profile.plugins
        assert set(profile.plugins) == set(REGISTRY) - {"parametrized_macros"}

    def test_relative_config_paths(self, tmp_path):
        (tmp_path / "cfg").mkdir()
        (tmp_path / "cfg" / "sm.toml").write_text("[simple_macros]\nthreshold = 1.0\n")
        (tmp_path / "profile.toml").write_text(
            'name = "ci"\nplugins = ["simple_macros"]\n[configs]\nsimple_macros = "cfg/sm.toml"\n')
        profile = load_profile(tmp_path / "profile.toml")
        assert profile.config_paths["simple_macros"] == str(tmp_path / "cfg" / "sm.toml")

    @pytest.mark.parametrize("text, message", [
        ('plugins = ["nope"]', "unknown plugin"),
        ('format = "xml"', "format"),
        ('colour = 1', "unknown profile key"),
    ])
    def test_invalid_profiles(self, tmp_path, text, message):
        path = tmp_path / "p.toml"
        path.write_text(text + "\n")
        with pytest.raises(ConfigError, match=message):
            load_profile(path)


class TestRunProfile:
    def test_zero_plugins(self):
        assert run_profile(policy(LOGD_RULE, R_DIR_MACROS), Profile("none", ())) == []

    def test_default_profile_on_logd_rule(self):
        findings = run_profile(policy(LOGD_RULE, R_DIR_MACROS), load_profile())
        assert any(f.suggestion == "allow logd rootfs:dir { r_dir_perms create };"
                   for f in findings)

    def test_deterministic(self):
        p = policy(LOGD_RULE, R_DIR_MACROS)
        first = format_findings(run_profile(p, load_profile()), "machine")
        assert first == format_findings(run_profile(p, load_profile()), "machine")

    def test_failing_plugin_keeps_completed_findings(self, monkeypatch):
        def boom(self, policy, settings):
            raise RuntimeError("kaput")
        monkeypatch.setattr(REGISTRY["risky_rules"], "run", boom)
        profile = Profile("t", ("simple_macros", "risky_rules"))
        with pytest.raises(PluginFailure) as err:
            run_profile(policy(LOGD_RULE, R_DIR_MACROS), profile)
        assert err.value.plugin == "risky_rules"
        assert [f.plugin for f in err.value.completed] == ["simple_macros"]

    def test_stats_recorded(self):
        stats = {}
        run_profile(policy(LOGD_RULE, R_DIR_MACROS), Profile("t", ("simple_macros",)), stats=stats)
        assert set(stats["simple_macros"]) == {"seconds", "peak_rss_mb", "findings"}


class SixthPlugin(Plugin):
    name = "sixth"
    description = "test-only plugin"

    def configure(self, options):
        return None

    def run(self, policy, settings):
        return []


def test_registering_a_plugin_is_one_entry(monkeypatch):
    from telint import cli
    monkeypatch.setitem(REGISTRY, "sixth", SixthPlugin)
    assert len(cli.list_plugins().splitlines()) == 6
