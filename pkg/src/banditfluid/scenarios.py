"""Built-in scenario models, shipped as version-controlled data files.

The two nonindexable 3-state variants and the 2-class abandonment queue are
the library's reference instances; loading them exercises the same JSON
loader as user files, so the fixtures double as round-trip tests.
"""

from __future__ import annotations

from importlib import resources

from .model import ModelInstance, load_model

SCENARIOS = ("nonindexable-3state", "nonindexable-3state-hard", "mmsm-2class")


def scenario_path(name: str):
    if name not in SCENARIOS:
        raise KeyError(f"unknown scenario {name!r}; builtins: {', '.join(SCENARIOS)}")
    return resources.files(__package__) / "data" / f"{name}.json"


def load_scenario(name: str) -> ModelInstance:
    with resources.as_file(scenario_path(name)) as path:
        return load_model(path)
