"""Command-line entry point.

Exit codes: 0 clean, 1 findings with --strict, 2 neverallow violations,
3 configuration, parse or plugin errors.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path
from typing import Dict, Optional, Sequence, TextIO

from .host import (
    FORMATS, ConfigError, PluginFailure, Profile, format_findings, load_profile, run_profile,
)
from .model import PolicyError
from .parser import DEFAULT_GUARDS, load_source_dirs, parse_policy
from .plugins import REGISTRY
from .plugins.risky_rules import CRITERIA

DEFAULT_PROFILE = "telint-profile"
PROFILE_ENV = "TELINT_PROFILE"

EXIT_CLEAN, EXIT_FINDINGS, EXIT_VIOLATION, EXIT_ERROR = 0, 1, 2, 3


def list_plugins() -> str:
    width = max(len(name) for name in REGISTRY)
    return "".join(f"{name:<{width}}  {cls.description}\n" for name, cls in REGISTRY.items())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="telint", description=__doc__.splitlines()[0])
    p.add_argument("--policy", metavar="DIR", action="append", default=[],
                   help="policy source directory; repeat to layer directories in order")
    p.add_argument("--profile", metavar="FILE",
                   help=f"profile file (default: ${PROFILE_ENV}, then ./{DEFAULT_PROFILE}, "
                        "then the built-in profile)")
    p.add_argument("--plugins", metavar="NAME[,NAME]",
                   help="run only these plugins")
    p.add_argument("--format", choices=FORMATS, help="output format (default: from profile)")
    p.add_argument("--criterion", choices=CRITERIA,
                   help="risky_rules scoring criterion override")
    p.add_argument("--strict", action="store_true", help="exit 1 when there are findings")
    p.add_argument("--list-plugins", action="store_true", help="list plugins and exit")
    p.add_argument("--stats", action="store_true",
                   help="print rule counts, plugin run times and peak memory to stderr")
    p.add_argument("-v", "--verbose", action="count", default=0,
                   help="more diagnostics on stderr")
    return p


def _resolve_profile(explicit: Optional[str]) -> Profile:
    path = explicit or os.environ.get(PROFILE_ENV)
    if path:
        if not Path(path).is_file():
            raise ConfigError(f"profile not found: {path}")
        return load_profile(path)
    if Path(DEFAULT_PROFILE).is_file():
        return load_profile(DEFAULT_PROFILE)
    return load_profile(None)


def _select(profile: Profile, plugins: Optional[str]) -> Profile:
    if not plugins:
        return profile
    names = [n.strip() for n in plugins.split(",") if n.strip()]
    unknown = [n for n in names if n not in REGISTRY]
    if unknown:
        raise ConfigError(f"unknown plugin(s): {', '.join(unknown)}")
    return Profile(profile.name, tuple(names), profile.config_paths, profile.output_format,
                   profile.parser, profile.source)


def _error(stderr: TextIO, kind: str, message: str) -> int:
    first, _, detail = str(message).partition("\n")
    stderr.write(f"error: {kind}: {first}\n")
    if detail:
        stderr.write(detail + "\n")
    return EXIT_ERROR


def run(args: argparse.Namespace, stdout: TextIO, stderr: TextIO) -> int:
    if args.list_plugins:
        stdout.write(list_plugins())
        return EXIT_CLEAN
    if not args.policy:
        return _error(stderr, "usage", "at least one --policy DIR is required")
    try:
        profile = _select(_resolve_profile(args.profile), args.plugins)
    except ConfigError as exc:
        return _error(stderr, "config", str(exc))

    started = time.perf_counter()
    try:
        sources = load_source_dirs(args.policy)
        if not any(path.endswith(".te") for path, _ in sources.files):
            return _error(stderr, "input", "no policy sources in " + ", ".join(args.policy))
        parser_opts = dict(profile.parser)
        policy = parse_policy(
            sources,
            undeclared=parser_opts.get("undeclared", "error"),
            guards=parser_opts.get("guards", DEFAULT_GUARDS),
        )
    except PolicyError as exc:
        return _error(stderr, "parse", str(exc))
    except (OSError, UnicodeDecodeError) as exc:
        return _error(stderr, "input", str(exc))
    parse_seconds = time.perf_counter() - started

    overrides: Dict[str, Dict[str, object]] = {}
    if args.criterion:
        overrides["risky_rules"] = {"criterion": args.criterion}
    stats: Dict[str, Dict[str, float]] = {}
    try:
        findings = run_profile(policy, profile, overrides=overrides, stats=stats)
    except ConfigError as exc:
        return _error(stderr, "config", str(exc))
    except PluginFailure as exc:
        stdout.write(format_findings(exc.completed, args.format or profile.output_format))
        kind = "config" if isinstance(exc.error, ConfigError) else "plugin"
        return _error(stderr, kind, str(exc))

    stdout.write(format_findings(findings, args.format or profile.output_format))
    if args.stats:
        stderr.write(f"stats: files={len(policy.files)} rules={len(policy.rules)} "
                     f"expanded_rule_count={policy.expanded_rule_count} "
                     f"parse_seconds={parse_seconds:.3f}\n")
        for name, entry in stats.items():
            stderr.write(f"stats: plugin={name} seconds={entry['seconds']:.3f} "
                         f"peak_rss_mb={entry['peak_rss_mb']:.1f} "
                         f"findings={int(entry['findings'])}\n")
    if any(f.severity == "violation" for f in findings):
        return EXIT_VIOLATION
    if args.strict and findings:
        return EXIT_FINDINGS
    return EXIT_CLEAN


def main(argv: Optional[Sequence[str]] = None, stdout: TextIO = None,
         stderr: TextIO = None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING
    handler = logging.StreamHandler(stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    root = logging.getLogger("telint")
    root.handlers[:] = [handler]
    root.setLevel(level)
    root.propagate = False
    return run(args, stdout, stderr)


if __name__ == "__main__":
    sys.exit(main())
