"""Bundled data assets and their loaders.

Assets live in ``fairlens/assets``: the occupation list, the demographic
taxonomy, word lexicons, token-probe comparison templates, meta-instruction
building blocks, stock system prompts, and the desk simulator spec.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path


def asset_text(name: str) -> str:
    return (resources.files("fairlens") / "assets" / name).read_text(encoding="utf-8")


def asset_json(name: str) -> dict | list:
    return json.loads(asset_text(name))


def default_occupations_path() -> Path:
    # importlib.resources gives a Traversable; the package is installed from
    # a real directory here, so a plain Path is safe and keeps CLI messages readable.
    return Path(str(resources.files("fairlens") / "assets" / "occupations.txt"))


def load_lexicon() -> dict:
    """Word groups per dimension plus the association concept-word sets."""
    return asset_json("lexicon.json")


def load_action_bank() -> dict:
    """Occupation -> action phrase map with a neutral fallback."""
    return asset_json("actions.json")


def load_comparison_templates() -> list[dict]:
    """The five paired-sentence templates used by the token probe."""
    return asset_json("comparison_templates.json")


def load_meta_blocks() -> dict:
    """Building blocks for meta-prompt assembly."""
    return asset_json("meta_instructions.json")


def load_system_prompts() -> dict:
    """Stock default system prompts keyed by style name."""
    return asset_json("system_prompts.json")


def load_desk_simulator_spec() -> dict:
    """Simulator spec used by the desk preset."""
    return asset_json("desk_simulator.json")
