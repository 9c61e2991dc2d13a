"""Plugin lifecycle, configuration files, profiles and finding output."""

from __future__ import annotations

import json
import resource
import sys
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .model import Policy, SourceLocation

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SEVERITIES = ("info", "suggestion", "warning", "violation")
FORMATS = ("text", "machine")
BUILTIN = "builtin"


class ConfigError(Exception):
    """Invalid profile or plugin configuration."""


class PluginFailure(Exception):
    """A plugin raised while running; carries findings of the plugins that completed."""

    def __init__(self, plugin: str, error: BaseException, completed: List["Finding"]):
        self.plugin = plugin
        self.error = error
        self.completed = completed
        super().__init__(f"plugin '{plugin}' failed: {error}")


@dataclass(frozen=True)
class Finding:
    plugin: str
    severity: str
    location: SourceLocation
    rule_text: str
    message: str = ""
    score: Optional[float] = None
    suggestion: Optional[str] = None

    def __post_init__(self) -> None:
        if self.severity not in SEVERITIES:
            raise ValueError(f"unknown severity {self.severity!r}")
        if self.score is not None and not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")

    def sort_key(self) -> tuple:
        scored = self.score is not None
        return (
            0 if scored else 1,
            -(self.score or 0.0),
            self.location.file,
            self.location.line,
            self.rule_text,
            self.plugin,
            self.message,
        )

    def as_record(self) -> Dict[str, Any]:
        return {
            "plugin": self.plugin,
            "severity": self.severity,
            "score": None if self.score is None else round(self.score, 6),
            "file": self.location.file,
            "line": self.location.line,
            "rule": self.rule_text,
            "message": self.message,
            "suggestion": self.suggestion,
        }


@dataclass(frozen=True)
class PluginConfig:
    plugin: str
    entries: Mapping[str, Any]
    source: str


class Options:
    """Typed access to a plugin's config entries; unknown keys are rejected."""

    def __init__(self, config: PluginConfig):
        self.config = config
        self.entries = dict(config.entries)
        self.used: set = set()

    def error(self, key: str, message: str) -> ConfigError:
        return ConfigError(f"{self.config.source}: [{self.config.plugin}] {key}: {message}")

    def get(self, key: str, default: Any = None, kind: Any = None) -> Any:
        self.used.add(key)
        if key not in self.entries:
            return default
        value = self.entries[key]
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if kind is not None and not isinstance(value, kind):
            raise self.error(key, f"expected {getattr(kind, '__name__', kind)}, got {value!r}")
        return value

    def strings(self, key: str, default: Sequence[str] = ()) -> Tuple[str, ...]:
        value = self.get(key, list(default), list)
        if not all(isinstance(v, str) for v in value):
            raise self.error(key, "expected a list of strings")
        return tuple(value)

    def finish(self) -> None:
        unknown = sorted(set(self.entries) - self.used)
        if unknown:
            raise self.error(unknown[0], "unknown key")


class Plugin:
    """Interface every analysis plugin implements.

    Add a plugin by subclassing and listing the class in `telint.plugins.REGISTRY`.
    """

    name: str = ""
    description: str = ""

    def configure(self, options: Options) -> Any:
        raise NotImplementedError

    def run(self, policy: Policy, settings: Any) -> List[Finding]:
        raise NotImplementedError


def read_toml(path: Path | str) -> Dict[str, Any]:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path}: file not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def builtin_text(name: str) -> str:
    return resources.files("telint").joinpath("defaults", name).read_text(encoding="utf-8")


def load_plugin_config(plugin: str, path: Optional[Path | str]) -> PluginConfig:
    """Read the `[plugin]` section of a config file (or the shipped default)."""
    if path is None or str(path) == BUILTIN:
        source = f"<builtin {plugin}.toml>"
        data = tomllib.loads(builtin_text(f"{plugin}.toml"))
    else:
        source = str(path)
        data = read_toml(path)
    extra = sorted(set(data) - {plugin})
    if extra:
        raise ConfigError(f"{source}: unexpected section [{extra[0]}]")
    entries = data.get(plugin, {})
    if not isinstance(entries, dict):
        raise ConfigError(f"{source}: [{plugin}] must be a table")
    return PluginConfig(plugin, entries, source)


@dataclass(frozen=True)
class Profile:
    name: str
    plugins: Tuple[str, ...]
    config_paths: Mapping[str, str] = field(default_factory=dict)
    output_format: str = "text"
    parser: Mapping[str, Any] = field(default_factory=dict)
    source: str = "<builtin profile>"


_PROFILE_KEYS = {"name", "plugins", "format", "configs", "parser"}
_PARSER_KEYS = {"undeclared", "guards"}


def parse_profile(data: Mapping[str, Any], source: str, base: Optional[Path] = None) -> Profile:
    from .plugins import REGISTRY

    unknown = sorted(set(data) - _PROFILE_KEYS)
    if unknown:
        raise ConfigError(f"{source}: unknown profile key '{unknown[0]}'")
    plugins = data.get("plugins", [])
    if not isinstance(plugins, list) or not all(isinstance(p, str) for p in plugins):
        raise ConfigError(f"{source}: plugins must be a list of names")
    for name in plugins:
        if name not in REGISTRY:
            raise ConfigError(f"{source}: unknown plugin '{name}'")
    fmt = data.get("format", "text")
    if fmt not in FORMATS:
        raise ConfigError(f"{source}: format must be one of {', '.join(FORMATS)}")
    configs = data.get("configs", {})
    if not isinstance(configs, dict):
        raise ConfigError(f"{source}: [configs] must be a table")
    paths = {}
    for name, value in configs.items():
        if name not in REGISTRY:
            raise ConfigError(f"{source}: config given for unknown plugin '{name}'")
        if value != BUILTIN and base is not None:
            value = str((base / value))
        paths[name] = value
    parser = data.get("parser", {})
    if not isinstance(parser, dict) or set(parser) - _PARSER_KEYS:
        raise ConfigError(f"{source}: [parser] accepts only {', '.join(sorted(_PARSER_KEYS))}")
    return Profile(str(data.get("name", "unnamed")), tuple(plugins), paths, fmt, parser, source)


def load_profile(path: Optional[Path | str] = None) -> Profile:
    """Load a profile file; None gives the shipped default profile."""
    if path is None:
        data = tomllib.loads(builtin_text("profile.toml"))
        return parse_profile(data, "<builtin profile>")
    path = Path(path)
    return parse_profile(read_toml(path), str(path), path.parent)


def configure_plugins(
    profile: Profile,
    overrides: Optional[Mapping[str, Mapping[str, Any]]] = None,
) -> Dict[str, Tuple[Plugin, Any]]:
    """Load and validate every enabled plugin's configuration before anything runs."""
    from .plugins import REGISTRY

    configured = {}
    for name in profile.plugins:
        config = load_plugin_config(name, profile.config_paths.get(name))
        if overrides and name in overrides:
            config = PluginConfig(name, {**config.entries, **overrides[name]}, config.source)
        plugin = REGISTRY[name]()
        options = Options(config)
        settings = plugin.configure(options)
        options.finish()
        configured[name] = (plugin, settings)
    return configured


def sort_findings(findings: Iterable[Finding]) -> List[Finding]:
    return sorted(findings, key=Finding.sort_key)


def _peak_rss_mb() -> float:
    # ru_maxrss is KiB on Linux.
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0


def run_profile(
    policy: Policy,
    profile: Profile,
    *,
    overrides: Optional[Mapping[str, Mapping[str, Any]]] = None,
    stats: Optional[Dict[str, Dict[str, float]]] = None,
) -> List[Finding]:
    configured = configure_plugins(profile, overrides)
    findings: List[Finding] = []
    for name, (plugin, settings) in configured.items():
        started = time.perf_counter()
        try:
            produced = plugin.run(policy, settings)
        except Exception as exc:
            raise PluginFailure(name, exc, sort_findings(findings)) from exc
        findings.extend(produced)
        if stats is not None:
            stats[name] = {
                "seconds": time.perf_counter() - started,
                "peak_rss_mb": _peak_rss_mb(),
                "findings": float(len(produced)),
            }
    return sort_findings(findings)


def _indent(text: str) -> str:
    return "\n".join("    " + line for line in text.splitlines())


def format_finding(finding: Finding) -> str:
    head = f"{finding.location}: {finding.rule_text}"
    if finding.score is not None:
        head = f"{finding.score:.2f}: {head}"
    lines = [head]
    if finding.message:
        lines.append(_indent(f"[{finding.plugin}] {finding.message}"))
    if finding.suggestion:
        lines.append(_indent("suggestion:"))
        lines.append(_indent(_indent(finding.suggestion)))
    return "\n".join(lines)


def format_findings(findings: Sequence[Finding], fmt: str = "text") -> str:
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}")
    if not findings:
        return ""
    if fmt == "machine":
        records = [json.dumps(f.as_record(), sort_keys=True) for f in findings]
    else:
        records = [format_finding(f) for f in findings]
    return "\n".join(records) + "\n"
