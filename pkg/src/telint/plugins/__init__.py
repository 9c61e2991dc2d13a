"""Registered analysis plugins, in report order."""

from typing import Dict, Type

from ..host import Plugin
from .parametrized_macros import ParametrizedMacrosPlugin
from .risky_rules import RiskyRulesPlugin
from .simple_macros import SimpleMacrosPlugin
from .unnecessary_rules import UnnecessaryRulesPlugin
from .user_neverallows import UserNeverallowsPlugin

REGISTRY: Dict[str, Type[Plugin]] = {
    cls.name: cls
    for cls in (
        SimpleMacrosPlugin,
        ParametrizedMacrosPlugin,
        RiskyRulesPlugin,
        UnnecessaryRulesPlugin,
        UserNeverallowsPlugin,
    )
}
