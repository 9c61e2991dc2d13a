"""Source-level linter for SELinux type-enforcement policies with M4 macros."""

from .host import ConfigError, Finding, Profile, format_findings, load_profile, run_profile
from .model import AVRule, MappedRule, Policy, PolicyError, SourceLocation, TERule
from .parser import expand_attributes, load_source_dirs, parse_policy, parse_text

__version__ = "0.1.0"

__all__ = [
    "AVRule", "ConfigError", "Finding", "MappedRule", "Policy", "PolicyError", "Profile",
    "SourceLocation", "TERule", "expand_attributes", "format_findings", "load_profile",
    "load_source_dirs", "parse_policy", "parse_text", "run_profile",
]
