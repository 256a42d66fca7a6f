"""Word-level scan of decoded prompt text.

Counts mentions of demographic word groups (gender, age, ethnicity) inside
model-decoded text. Matching is case-insensitive on whole words; multi-word
phrases are matched before shorter ones and consume their span, so "old man"
counts as Elderly without also counting "man" as Adult. A matched phrase
counts once for every group that lists it within the same dimension (for
example "indian" appears in two ethnicity groups and increments both).
Dimensions are scanned independently of each other.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from ..errors import InvalidDimension, KeyMismatch
from ..resources import load_lexicon


def _phrase_pattern(phrase: str) -> re.Pattern:
    words = [re.escape(w) for w in phrase.split()]
    return re.compile(r"\b" + r"\s+".join(words) + r"\b", re.IGNORECASE)


def _compile_dimension(groups: Mapping[str, Sequence[str]]):
    """Return [(pattern, phrase, groups containing it)] sorted longest-first."""
    phrase_groups: dict[str, list[str]] = {}
    for group, words in groups.items():
        for word in words:
            phrase_groups.setdefault(word.lower(), []).append(group)
    ordered = sorted(
        phrase_groups,
        key=lambda p: (-len(p.split()), -len(p), p),
    )
    return [(_phrase_pattern(p), p, tuple(phrase_groups[p])) for p in ordered]


@dataclass
class WordDistribution:
    """Group mention counts and within-dimension proportions."""

    counts: dict[str, dict[str, int]]
    proportions: dict[str, dict[str, float]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.proportions:
            self.proportions = {}
            for dim, groups in self.counts.items():
                total = sum(groups.values())
                self.proportions[dim] = {
                    g: (c / total if total else 0.0) for g, c in groups.items()
                }


def find_group_mentions(
    text: str,
    dimensions: Mapping[str, Mapping[str, Sequence[str]]] | None = None,
) -> dict[str, dict[str, int]]:
    """Count group mentions in a single text, one dict per dimension."""
    if dimensions is None:
        dimensions = load_lexicon()["dimensions"]
    out: dict[str, dict[str, int]] = {}
    for dim, groups in dimensions.items():
        counts = {g: 0 for g in groups}
        consumed: list[tuple[int, int]] = []
        for pattern, _phrase, phrase_groups in _compile_dimension(groups):
            for match in pattern.finditer(text):
                span = match.span()
                if any(span[0] < e and s < span[1] for s, e in consumed):
                    continue
                consumed.append(span)
                for g in phrase_groups:
                    counts[g] += 1
        out[dim] = counts
    return out


def word_distribution(
    texts: Iterable[str],
    dimensions: Mapping[str, Mapping[str, Sequence[str]]] | None = None,
    dimension: str | None = None,
) -> WordDistribution:
    """Aggregate group mention counts over many decoded texts.

    With `dimension` given, only that dimension is scanned; an unknown name
    raises InvalidDimension.
    """
    if dimensions is None:
        dimensions = load_lexicon()["dimensions"]
    if dimension is not None:
        if dimension not in dimensions:
            raise InvalidDimension(
                f"unknown dimension {dimension!r}; expected one of {sorted(dimensions)}"
            )
        dimensions = {dimension: dimensions[dimension]}
    totals: dict[str, dict[str, int]] = {
        dim: {g: 0 for g in groups} for dim, groups in dimensions.items()
    }
    for text in texts:
        per_text = find_group_mentions(text, dimensions)
        for dim, groups in per_text.items():
            for g, c in groups.items():
                totals[dim][g] += c
    return WordDistribution(counts=totals)


def text_gender_leaning(
    text: str,
    dimensions: Mapping[str, Mapping[str, Sequence[str]]] | None = None,
) -> str | None:
    """Which gender group a single text mentions more, or None on a tie."""
    counts = find_group_mentions(text, dimensions)["gender"]
    if counts["male"] > counts["female"]:
        return "male"
    if counts["female"] > counts["male"]:
        return "female"
    return None


def majority_leaning(leanings: Sequence[str | None], n_total: int) -> str | None:
    """The leaning held by a strict majority of all n_total samples, if any."""
    if n_total <= 0:
        raise ValueError("n_total must be positive")
    for side in ("male", "female"):
        if sum(1 for lean in leanings if lean == side) * 2 > n_total:
            return side
    return None


@dataclass(frozen=True)
class AgreementResult:
    n_compared: int
    n_agree: int

    @property
    def agreement(self) -> float | None:
        if self.n_compared == 0:
            return None
        return self.n_agree / self.n_compared


def decoded_agreement(
    decoded: Mapping[str, str | None],
    visual: Mapping[str, str | None],
) -> AgreementResult:
    """Agreement between decoded-text and visual bias directions.

    Both maps go prompt id -> majority leaning (or None) and must cover the
    same prompts. Only prompts where both sides produced a leaning are
    compared.
    """
    if set(decoded) != set(visual):
        raise KeyMismatch(
            "decoded and visual maps cover different prompts: "
            f"{sorted(set(decoded) ^ set(visual))[:5]}"
        )
    compared = 0
    agree = 0
    for pid in sorted(decoded):
        d = decoded[pid]
        v = visual[pid]
        if d is None or v is None:
            continue
        compared += 1
        if d == v:
            agree += 1
    return AgreementResult(n_compared=compared, n_agree=agree)
