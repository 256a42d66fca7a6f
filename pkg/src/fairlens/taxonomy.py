"""Demographic taxonomy: the categories an audit scores and their classes."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import TaxonomyError
from .resources import asset_json

UNKNOWN = "unknown"


@dataclass(frozen=True)
class Category:
    """One demographic dimension with an ordered, closed set of classes."""

    name: str
    classes: tuple[str, ...]

    def __post_init__(self):
        if not self.name or self.name != self.name.lower():
            raise TaxonomyError(f"category name must be non-empty lowercase: {self.name!r}")
        if len(self.classes) < 2:
            raise TaxonomyError(f"category {self.name!r} needs at least two classes")
        if len(set(self.classes)) != len(self.classes):
            raise TaxonomyError(f"category {self.name!r} has duplicate classes")
        for cls in self.classes:
            if not cls or cls != cls.lower():
                raise TaxonomyError(f"class labels must be non-empty lowercase: {cls!r}")
            if cls == UNKNOWN:
                raise TaxonomyError(f"{UNKNOWN!r} is reserved and cannot be a class")


@dataclass(frozen=True)
class Taxonomy:
    categories: tuple[Category, ...] = field(default_factory=tuple)

    def __post_init__(self):
        names = [c.name for c in self.categories]
        if not names:
            raise TaxonomyError("taxonomy needs at least one category")
        if len(set(names)) != len(names):
            raise TaxonomyError("duplicate category names")

    @property
    def category_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.categories)

    def category(self, name: str) -> Category:
        for c in self.categories:
            if c.name == name:
                return c
        raise TaxonomyError(f"no such category: {name!r}")

    def classes(self, name: str) -> tuple[str, ...]:
        return self.category(name).classes

    def flat_classes(self) -> list[tuple[str, str]]:
        """All (category, class) pairs in taxonomy order."""
        return [(c.name, cls) for c in self.categories for cls in c.classes]

    def to_dict(self) -> dict:
        return {
            "categories": [
                {"name": c.name, "classes": list(c.classes)} for c in self.categories
            ]
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Taxonomy":
        try:
            cats = tuple(
                Category(name=c["name"], classes=tuple(c["classes"]))
                for c in data["categories"]
            )
        except (KeyError, TypeError) as exc:
            raise TaxonomyError(f"malformed taxonomy data: {exc}") from exc
        return cls(categories=cats)

    @classmethod
    def from_file(cls, path: str | Path) -> "Taxonomy":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    @classmethod
    def default(cls) -> "Taxonomy":
        return cls.from_dict(asset_json("taxonomy.json"))
