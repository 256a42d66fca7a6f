"""Benchmark corpus construction.

Four prompt levels, all derived from one occupation list:

- occupation: the bare article form, e.g. "an accountant".
- simple: one demographic class prepended, e.g. "Male accountant". The class
  is drawn uniformly over the flat union of all taxonomy classes.
- context: the simple prompt as a sentence with an occupation-specific action,
  e.g. "a male accountant is preparing financial reports".
- rewritten: the occupation prompt expanded by an LLM rewriter, stored
  verbatim. Rewritten text is scanned for demographic words; any hits become
  diagnostic flags but are never treated as explicit attributes.

Explicitly specified attributes are excluded from judging and scoring for
that prompt, which is what the explicit_attributes field records.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import EmptyCorpus, EndpointError, MissingAction, RewriteFailed
from .jsonutil import read_jsonl, write_jsonl_atomic
from .modelio.endpoints import ChatRequest
from .probes.words import find_group_mentions
from .resources import default_occupations_path, load_action_bank
from .taxonomy import Taxonomy
from .textutil import slugify, strip_article, with_article

log = logging.getLogger(__name__)

LEVEL_OCCUPATION = "occupation"
LEVEL_SIMPLE = "simple"
LEVEL_CONTEXT = "context"
LEVEL_REWRITTEN = "rewritten"
LEVELS = (LEVEL_OCCUPATION, LEVEL_SIMPLE, LEVEL_CONTEXT, LEVEL_REWRITTEN)

REWRITE_TEMPLATE = (
    "Rewrite the following image prompt to be more detailed and vivid while "
    "preserving its meaning. Reply with the rewritten prompt only.\n\n{prompt}"
)


@dataclass(frozen=True)
class Prompt:
    id: str
    level: str
    text: str
    occupation: str  # bare noun, no article
    explicit_attributes: tuple[tuple[str, str], ...] = ()
    diagnostics: tuple[tuple[str, str], ...] = ()  # flagged (dimension, group) hits

    def __post_init__(self):
        if self.level not in LEVELS:
            raise ValueError(f"unknown level {self.level!r}")
        if not self.text or not self.occupation:
            raise ValueError("prompt text and occupation must be non-empty")

    @property
    def explicit_categories(self) -> frozenset[str]:
        return frozenset(category for category, _ in self.explicit_attributes)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "level": self.level,
            "text": self.text,
            "occupation": self.occupation,
            "explicit_attributes": [list(pair) for pair in self.explicit_attributes],
            "diagnostics": [list(pair) for pair in self.diagnostics],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Prompt":
        return cls(
            id=data["id"],
            level=data["level"],
            text=data["text"],
            occupation=data["occupation"],
            explicit_attributes=tuple(
                (c, v) for c, v in data.get("explicit_attributes", [])
            ),
            diagnostics=tuple((d, g) for d, g in data.get("diagnostics", [])),
        )


@dataclass
class PromptSet:
    taxonomy: Taxonomy
    prompts: tuple[Prompt, ...] = field(default_factory=tuple)

    def __post_init__(self):
        ids = [p.id for p in self.prompts]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate prompt ids")

    def by_level(self, level: str) -> list[Prompt]:
        return [p for p in self.prompts if p.level == level]

    def by_id(self, prompt_id: str) -> Prompt:
        for p in self.prompts:
            if p.id == prompt_id:
                return p
        raise KeyError(prompt_id)

    @property
    def levels(self) -> tuple[str, ...]:
        seen = []
        for p in self.prompts:
            if p.level not in seen:
                seen.append(p.level)
        return tuple(level for level in LEVELS if level in seen)

    def scorable_prompts(self, category: str, level: str | None = None) -> list[Prompt]:
        """Prompts judged on this category: those not specifying it explicitly."""
        pool = self.prompts if level is None else self.by_level(level)
        return [p for p in pool if category not in p.explicit_categories]

    def save(self, path: str | Path) -> None:
        """Persist as JSON-lines, one prompt per line.

        The taxonomy is not part of the benchmark file; it travels with the
        run configuration and is supplied again on load.
        """
        write_jsonl_atomic(Path(path), (p.to_dict() for p in self.prompts))

    @classmethod
    def load(cls, path: str | Path, taxonomy: Taxonomy | None = None) -> "PromptSet":
        rows = read_jsonl(Path(path))
        return cls(
            taxonomy=taxonomy or Taxonomy.default(),
            prompts=tuple(Prompt.from_dict(p) for p in rows),
        )


def load_occupations(source: str | Path | Iterable[str] | None = None) -> list[str]:
    """Read and normalize the occupation list.

    Entries are lowercased, whitespace-collapsed, and given an indefinite
    article when missing. Duplicates after normalization are dropped with a
    warning, keeping the first occurrence.
    """
    if source is None:
        source = default_occupations_path()
    if isinstance(source, (str, Path)):
        lines: Iterable[str] = Path(source).read_text(encoding="utf-8").splitlines()
    else:
        lines = source
    seen: dict[str, None] = {}
    for line in lines:
        entry = " ".join(line.split()).lower()
        if not entry or entry.startswith("#"):
            continue
        noun = strip_article(entry)
        normalized = entry if entry != noun else with_article(noun)
        if normalized in seen:
            log.warning("duplicate occupation dropped: %r", normalized)
            continue
        seen[normalized] = None
    if not seen:
        raise EmptyCorpus("occupation source yielded no entries")
    return list(seen)


def build_occupation_prompts(occupations: Sequence[str]) -> list[Prompt]:
    prompts = []
    for occ in occupations:
        noun = strip_article(occ)
        prompts.append(
            Prompt(
                id=f"{LEVEL_OCCUPATION}-{slugify(noun)}",
                level=LEVEL_OCCUPATION,
                text=occ,
                occupation=noun,
            )
        )
    return prompts


def build_simple(
    occupation_prompts: Sequence[Prompt], taxonomy: Taxonomy, seed: int
) -> list[Prompt]:
    """Level 2: prepend one uniformly sampled demographic class."""
    rng = random.Random(seed)
    flat = taxonomy.flat_classes()
    prompts = []
    for base in occupation_prompts:
        category, cls = rng.choice(flat)
        prompts.append(
            Prompt(
                id=f"{LEVEL_SIMPLE}-{slugify(base.occupation)}",
                level=LEVEL_SIMPLE,
                text=f"{cls.capitalize()} {base.occupation}",
                occupation=base.occupation,
                explicit_attributes=((category, cls),),
            )
        )
    return prompts


def build_context(
    simple_prompts: Sequence[Prompt],
    action_bank: Mapping | None = None,
    seed: int = 0,
) -> list[Prompt]:
    """Level 3: a lowercase sentence placing the simple prompt in an activity.

    The action bank maps occupation noun -> action phrase (or a list of
    phrases, sampled with `seed`). A missing occupation uses the bank's
    fallback action; with no fallback it raises MissingAction.
    """
    if action_bank is None:
        action_bank = load_action_bank()
    actions = action_bank.get("actions", action_bank)
    fallback = action_bank.get("fallback") if isinstance(action_bank, Mapping) else None
    rng = random.Random(seed)
    prompts = []
    for base in simple_prompts:
        if not base.explicit_attributes:
            raise ValueError(f"context prompts build on simple prompts: {base.id}")
        action = actions.get(base.occupation, fallback)
        if action is None:
            raise MissingAction(f"no action for {base.occupation!r} and no fallback")
        if isinstance(action, (list, tuple)):
            action = rng.choice(list(action))
        (_, cls), = base.explicit_attributes
        subject = with_article(f"{cls} {base.occupation}")
        prompts.append(
            Prompt(
                id=f"{LEVEL_CONTEXT}-{slugify(base.occupation)}",
                level=LEVEL_CONTEXT,
                text=f"{subject} is {action}",
                occupation=base.occupation,
                explicit_attributes=base.explicit_attributes,
            )
        )
    return prompts


def scan_demographic_flags(
    text: str, dimensions: Mapping | None = None
) -> tuple[tuple[str, str], ...]:
    """(dimension, group) pairs mentioned in the text, in stable order."""
    mentions = find_group_mentions(text, dimensions)
    flags = []
    for dim in sorted(mentions):
        for group in sorted(mentions[dim]):
            if mentions[dim][group] > 0:
                flags.append((dim, group))
    return tuple(flags)


def build_rewritten(
    occupation_prompts: Sequence[Prompt],
    rewriter,
    template: str | None = None,
    seed: int = 0,
    rewrite_cache: dict[str, str] | None = None,
) -> list[Prompt]:
    """Level 4: LLM-rewritten occupation prompts, stored verbatim.

    The rewriter is any chat callable or client. Demographic words that leak
    into the rewrite are recorded in the diagnostics field; explicit_attributes
    stays empty so these prompts are scored on every category.

    `rewrite_cache` (prompt id -> raw rewritten text) is consulted before each
    call and updated after each success. When an endpoint call fails, the
    cache keeps everything completed so far and RewriteFailed is raised for
    the prompt that failed, so a resumed run only re-requests the missing ones.
    """
    chat = rewriter.chat if hasattr(rewriter, "chat") else rewriter
    template = template or REWRITE_TEMPLATE
    prompts = []
    for base in occupation_prompts:
        prompt_id = f"{LEVEL_REWRITTEN}-{slugify(base.occupation)}"
        rewritten = rewrite_cache.get(prompt_id) if rewrite_cache is not None else None
        if rewritten is None:
            request = ChatRequest(
                user_prompt=template.format(prompt=base.text),
                temperature=0.7,
                seed=seed,
            )
            try:
                rewritten = chat(request).text.strip()
            except EndpointError as exc:
                raise RewriteFailed(prompt_id, f"rewrite failed for {prompt_id}: {exc}") from exc
            if not rewritten:
                raise ValueError(f"rewriter returned empty text for {base.id}")
            if rewrite_cache is not None:
                rewrite_cache[prompt_id] = rewritten
        prompts.append(
            Prompt(
                id=prompt_id,
                level=LEVEL_REWRITTEN,
                text=rewritten,
                occupation=base.occupation,
                diagnostics=scan_demographic_flags(rewritten),
            )
        )
    return prompts


def build_corpus(
    occupations: Sequence[str],
    taxonomy: Taxonomy | None = None,
    seed: int = 0,
    levels: Sequence[str] = LEVELS,
    rewriter=None,
    action_bank: Mapping | None = None,
    rewrite_template: str | None = None,
    rewrite_cache: dict[str, str] | None = None,
) -> PromptSet:
    """Build all requested levels into one PromptSet."""
    taxonomy = taxonomy or Taxonomy.default()
    unknown = set(levels) - set(LEVELS)
    if unknown:
        raise ValueError(f"unknown levels: {sorted(unknown)}")
    if not levels:
        raise ValueError("at least one level required")
    occupation_prompts = build_occupation_prompts(occupations)
    simple_prompts = build_simple(occupation_prompts, taxonomy, seed)
    prompts: list[Prompt] = []
    if LEVEL_OCCUPATION in levels:
        prompts.extend(occupation_prompts)
    if LEVEL_SIMPLE in levels:
        prompts.extend(simple_prompts)
    if LEVEL_CONTEXT in levels:
        prompts.extend(build_context(simple_prompts, action_bank, seed))
    if LEVEL_REWRITTEN in levels:
        if rewriter is None:
            raise ValueError("rewritten level requires a rewriter client")
        prompts.extend(
            build_rewritten(
                occupation_prompts, rewriter, rewrite_template, seed, rewrite_cache
            )
        )
    return PromptSet(taxonomy=taxonomy, prompts=tuple(prompts))
