"""Small text helpers shared by corpus construction and probes."""

from __future__ import annotations

import re

_ARTICLE_RE = re.compile(r"^(a|an)\s+", re.IGNORECASE)

# Nouns whose leading vowel letter is pronounced as a consonant.
_CONSONANT_SOUND = {"urologist", "european", "one", "unicorn", "university", "uniform"}


def strip_article(text: str) -> str:
    """Drop a leading indefinite article if present."""
    return _ARTICLE_RE.sub("", text.strip())


def with_article(noun: str) -> str:
    """Prefix the indefinite article chosen by the leading sound."""
    noun = noun.strip()
    first_word = noun.split()[0].lower() if noun else ""
    if first_word in _CONSONANT_SOUND:
        return f"a {noun}"
    article = "an" if noun[:1].lower() in "aeiou" else "a"
    return f"{article} {noun}"


def slugify(text: str) -> str:
    """Lowercase, hyphen-separated identifier fragment."""
    return re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-")
