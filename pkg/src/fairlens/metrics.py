"""Bias and alignment metrics.

The central quantity is the fair-discrepancy (FD) score for a demographic
category: for each prompt, the empirical class distribution over its sampled
generations is compared against the uniform distribution by L2 distance, and
the per-prompt distances are averaged. The raw score is normalized by
sqrt(1 - 1/N) (N = number of classes), the distance of a one-hot distribution
from uniform, so normalized scores live in [0, 1] regardless of N.

Accumulations run over inputs in a caller-fixed order with math.fsum, so
results are reproducible bit-for-bit across runs and platforms.
"""

from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    EmbeddingShapeError,
    EmptyDistribution,
    NoDataForCategory,
    NotEnoughSamples,
    UndefinedCorrelation,
)
from .taxonomy import UNKNOWN


@dataclass(frozen=True)
class AttributeDistribution:
    """Empirical class distribution for one prompt and one category."""

    category: str
    support: tuple[str, ...]
    probs: tuple[float, ...]
    n_samples: int

    def __post_init__(self):
        if len(self.support) != len(self.probs):
            raise ValueError("support and probs length mismatch")
        if any(p < 0 for p in self.probs):
            raise ValueError("negative probability")
        total = math.fsum(self.probs)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {total}, expected 1")


@dataclass(frozen=True)
class BiasScore:
    """FD score for one category over a set of prompts."""

    category: str
    raw: float
    normalized: float
    n_classes: int
    n_prompts: int
    unknown_rate: float = 0.0


def empirical_distribution(
    records: Iterable[object],
    category: str,
    classes: Sequence[str],
) -> AttributeDistribution:
    """Build the per-prompt class distribution from annotation records.

    Unknown labels are dropped and the remaining mass renormalized; Unknown is
    never treated as an extra class. Raises EmptyDistribution when every label
    is Unknown (the caller excludes the prompt from the FD denominator).
    """
    counts = {cls: 0 for cls in classes}
    n_unknown = 0
    n_total = 0
    for rec in records:
        label = rec.labels.get(category)
        if label is None:
            continue
        n_total += 1
        if label == UNKNOWN:
            n_unknown += 1
        elif label in counts:
            counts[label] += 1
        else:
            raise ValueError(f"label {label!r} not in support for {category!r}")
    known = n_total - n_unknown
    if n_total == 0:
        raise NoDataForCategory(f"no records carry a label for {category!r}")
    if known == 0:
        raise EmptyDistribution(f"all {n_total} labels for {category!r} were {UNKNOWN}")
    probs = tuple(counts[cls] / known for cls in classes)
    return AttributeDistribution(
        category=category, support=tuple(classes), probs=probs, n_samples=known
    )


def _uniform_distance(probs: Sequence[float]) -> float:
    n = len(probs)
    u = 1.0 / n
    return math.sqrt(math.fsum((p - u) ** 2 for p in probs))


def normalization_factor(n_classes: int) -> float:
    """Distance of a one-hot distribution from uniform: sqrt(1 - 1/N)."""
    if n_classes < 2:
        raise ValueError("need at least two classes")
    return math.sqrt(1.0 - 1.0 / n_classes)


def fd_bias(
    distributions: Sequence[AttributeDistribution],
    *,
    unknown_rate: float = 0.0,
) -> BiasScore:
    """Average L2 distance from uniform across prompts, plus normalized form.

    All distributions must share one category and support; iterate them in a
    fixed (prompt-id) order for reproducible accumulation.
    """
    if not distributions:
        raise NoDataForCategory("no distributions to score")
    category = distributions[0].category
    support = distributions[0].support
    for dist in distributions:
        if dist.category != category or dist.support != support:
            raise ValueError("mixed categories or supports in fd_bias input")
    raw = math.fsum(_uniform_distance(d.probs) for d in distributions) / len(distributions)
    factor = normalization_factor(len(support))
    return BiasScore(
        category=category,
        raw=raw,
        normalized=raw / factor,
        n_classes=len(support),
        n_prompts=len(distributions),
        unknown_rate=unknown_rate,
    )


def alignment_score(image_embedding: np.ndarray, text_embedding: np.ndarray) -> float:
    """Cosine similarity between unit-normalized image and text embeddings."""
    img = np.asarray(image_embedding, dtype=np.float64)
    txt = np.asarray(text_embedding, dtype=np.float64)
    if img.shape != txt.shape or img.ndim != 1:
        raise EmbeddingShapeError(
            f"embedding shape mismatch: {img.shape} vs {txt.shape}"
        )
    return float(np.dot(img, txt))


def pairwise_diversity(
    embeddings: Sequence[np.ndarray],
    n_pairs: int = 4,
    seed: int = 0,
) -> float:
    """Mean cosine similarity over a seeded sample of embedding pairs.

    Lower similarity means more visual diversity. With fewer candidate pairs
    than n_pairs, all pairs are used.
    """
    if len(embeddings) < 2:
        raise NotEnoughSamples("diversity needs at least two embeddings")
    if n_pairs < 1:
        raise ValueError("n_pairs must be positive")
    pairs = list(itertools.combinations(range(len(embeddings)), 2))
    if n_pairs < len(pairs):
        pairs = random.Random(seed).sample(pairs, n_pairs)
    return math.fsum(
        alignment_score(embeddings[i], embeddings[j]) for i, j in pairs
    ) / len(pairs)


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Pearson correlation coefficient, fsum-accumulated."""
    if len(xs) != len(ys):
        raise ValueError("length mismatch")
    n = len(xs)
    if n < 2:
        raise ValueError("need at least two points")
    mx = math.fsum(xs) / n
    my = math.fsum(ys) / n
    sxy = math.fsum((x - mx) * (y - my) for x, y in zip(xs, ys))
    sxx = math.fsum((x - mx) ** 2 for x in xs)
    syy = math.fsum((y - my) ** 2 for y in ys)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelation("zero variance input")
    return sxy / math.sqrt(sxx * syy)


def mean_or_none(values: Sequence[float]) -> float | None:
    if not values:
        return None
    return math.fsum(values) / len(values)


ALL_LEVELS = "all"


@dataclass
class BiasReport:
    """Full audit aggregate: FD per (mode, level, category) plus alignment,
    diversity, and the bias/alignment correlation."""

    modes: tuple[str, ...]
    levels: tuple[str, ...]
    categories: tuple[str, ...]
    bias: dict  # mode -> level ("all" included) -> category -> BiasScore | None
    bias_mean: dict  # mode -> level -> float | None (mean over categories)
    alignment: dict  # mode -> level -> float | None
    alignment_mean: dict  # mode -> float | None
    diversity: dict  # mode -> level -> float | None
    diversity_mean: dict  # mode -> float | None
    pearson_by_mode: dict  # mode -> float | None
    pearson_pooled: float | None
    unknown_rate: dict  # mode -> float
    notes: list[str]
    pearson_per_prompt: dict | None = None  # mode -> float | None, optional

    def to_dict(self) -> dict:
        def score_dict(score):
            if score is None:
                return None
            return {
                "category": score.category,
                "raw": score.raw,
                "normalized": score.normalized,
                "n_classes": score.n_classes,
                "n_prompts": score.n_prompts,
                "unknown_rate": score.unknown_rate,
            }

        return {
            "modes": list(self.modes),
            "levels": list(self.levels),
            "categories": list(self.categories),
            "bias": {
                mode: {
                    level: {cat: score_dict(s) for cat, s in cats.items()}
                    for level, cats in levels.items()
                }
                for mode, levels in self.bias.items()
            },
            "bias_mean": self.bias_mean,
            "alignment": self.alignment,
            "alignment_mean": self.alignment_mean,
            "diversity": self.diversity,
            "diversity_mean": self.diversity_mean,
            "pearson": {
                "by_mode": self.pearson_by_mode,
                "pooled": self.pearson_pooled,
                "per_prompt": self.pearson_per_prompt,
            },
            "unknown_rate": self.unknown_rate,
            "notes": list(self.notes),
        }


def _cell(prompts, records_by_pid, category: str, classes: Sequence[str], notes,
          where: str):
    """FD for one (mode, level, category) cell, or None when unscorable."""
    dists = []
    unknown = 0
    total = 0
    for prompt in sorted(prompts, key=lambda p: p.id):
        records = sorted(records_by_pid.get(prompt.id, []), key=lambda r: r.seed)
        if not records:
            continue
        for rec in records:
            label = rec.labels.get(category)
            if label is not None:
                total += 1
                if label == UNKNOWN:
                    unknown += 1
        try:
            dists.append(empirical_distribution(records, category, classes))
        except EmptyDistribution:
            notes.append(
                f"{where}: prompt {prompt.id} excluded (all labels Unknown)"
            )
    if not dists:
        notes.append(f"{where}: no scorable prompts")
        return None
    return fd_bias(dists, unknown_rate=(unknown / total if total else 0.0))


def aggregate_report(
    prompt_set,
    annotations_by_mode: Mapping[str, Sequence[object]],
    *,
    image_embeddings: Mapping[str, Mapping[str, Sequence[np.ndarray]]] | None = None,
    text_embeddings: Mapping[str, np.ndarray] | None = None,
    diversity_pairs: int = 4,
    diversity_seed: int = 0,
    per_prompt_pearson: bool = False,
) -> BiasReport:
    """Aggregate annotations (and optional embeddings) into a BiasReport.

    annotations_by_mode maps mode -> annotation records. image_embeddings maps
    mode -> prompt id -> per-seed embeddings; text_embeddings maps prompt id
    -> embedding. The "all" level pools every prompt that does not explicitly
    specify the category, across levels.

    The headline correlation is over per-level aggregate (bias, alignment)
    pairs; `per_prompt_pearson` additionally correlates per-prompt bias with
    per-prompt alignment within each mode.
    """
    taxonomy = prompt_set.taxonomy
    modes = tuple(annotations_by_mode)
    levels = prompt_set.levels
    categories = taxonomy.category_names
    notes: list[str] = []

    bias: dict = {}
    bias_mean: dict = {}
    alignment: dict = {}
    alignment_mean: dict = {}
    diversity: dict = {}
    diversity_mean: dict = {}
    pearson_by_mode: dict = {}
    unknown_rate: dict = {}
    pooled_points: list[tuple[float, float]] = []
    pearson_per_prompt: dict | None = {} if per_prompt_pearson else None

    for mode in modes:
        records = annotations_by_mode[mode]
        by_pid: dict[str, list] = {}
        total_labels = 0
        unknown_labels = 0
        for rec in records:
            by_pid.setdefault(rec.prompt_id, []).append(rec)
            for label in rec.labels.values():
                total_labels += 1
                if label == UNKNOWN:
                    unknown_labels += 1
        unknown_rate[mode] = unknown_labels / total_labels if total_labels else 0.0

        bias[mode] = {}
        bias_mean[mode] = {}
        for level in list(levels) + [ALL_LEVELS]:
            level_filter = None if level == ALL_LEVELS else level
            cells = {}
            for category in categories:
                prompts = prompt_set.scorable_prompts(category, level_filter)
                cells[category] = _cell(
                    prompts, by_pid, category, taxonomy.classes(category), notes,
                    where=f"{mode}/{level}/{category}",
                )
            bias[mode][level] = cells
            bias_mean[mode][level] = mean_or_none(
                [s.normalized for s in cells.values() if s is not None]
            )

        alignment[mode] = {}
        diversity[mode] = {}
        for level in levels:
            align_values = []
            diversity_values = []
            if image_embeddings is not None and mode in image_embeddings:
                mode_embs = image_embeddings[mode]
                for prompt in sorted(prompt_set.by_level(level), key=lambda p: p.id):
                    embs = mode_embs.get(prompt.id, [])
                    if text_embeddings is not None and prompt.id in text_embeddings:
                        text_emb = text_embeddings[prompt.id]
                        for emb in embs:
                            align_values.append(alignment_score(emb, text_emb))
                    if len(embs) >= 2:
                        diversity_values.append(
                            pairwise_diversity(embs, diversity_pairs, diversity_seed)
                        )
            alignment[mode][level] = mean_or_none(align_values)
            diversity[mode][level] = mean_or_none(diversity_values)
        alignment_mean[mode] = mean_or_none(
            [v for v in alignment[mode].values() if v is not None]
        )
        diversity_mean[mode] = mean_or_none(
            [v for v in diversity[mode].values() if v is not None]
        )

        points = [
            (bias_mean[mode][level], alignment[mode][level])
            for level in levels
            if bias_mean[mode][level] is not None
            and alignment[mode][level] is not None
        ]
        pooled_points.extend(points)
        if len(points) >= 2:
            try:
                pearson_by_mode[mode] = pearson(
                    [p[0] for p in points], [p[1] for p in points]
                )
            except UndefinedCorrelation:
                pearson_by_mode[mode] = None
                notes.append(f"{mode}: bias/alignment correlation undefined")
        else:
            pearson_by_mode[mode] = None
            notes.append(f"{mode}: too few level points for correlation")

        if pearson_per_prompt is not None:
            pp_points = []
            for prompt in sorted(prompt_set.prompts, key=lambda p: p.id):
                records = sorted(by_pid.get(prompt.id, []), key=lambda r: r.seed)
                if not records:
                    continue
                cat_values = []
                for category in categories:
                    if category in prompt.explicit_categories:
                        continue
                    try:
                        dist = empirical_distribution(
                            records, category, taxonomy.classes(category)
                        )
                    except EmptyDistribution:
                        continue
                    cat_values.append(fd_bias([dist]).normalized)
                align_values = []
                if (
                    image_embeddings is not None
                    and mode in image_embeddings
                    and text_embeddings is not None
                    and prompt.id in text_embeddings
                ):
                    text_emb = text_embeddings[prompt.id]
                    for emb in image_embeddings[mode].get(prompt.id, []):
                        align_values.append(alignment_score(emb, text_emb))
                if cat_values and align_values:
                    pp_points.append(
                        (mean_or_none(cat_values), mean_or_none(align_values))
                    )
            pearson_per_prompt[mode] = None
            if len(pp_points) >= 2:
                try:
                    pearson_per_prompt[mode] = pearson(
                        [p[0] for p in pp_points], [p[1] for p in pp_points]
                    )
                except UndefinedCorrelation:
                    notes.append(
                        f"{mode}: per-prompt bias/alignment correlation undefined"
                    )

    pearson_pooled = None
    if len(pooled_points) >= 2:
        try:
            pearson_pooled = pearson(
                [p[0] for p in pooled_points], [p[1] for p in pooled_points]
            )
        except UndefinedCorrelation:
            notes.append("pooled bias/alignment correlation undefined")

    return BiasReport(
        modes=modes,
        levels=levels,
        categories=categories,
        bias=bias,
        bias_mean=bias_mean,
        alignment=alignment,
        alignment_mean=alignment_mean,
        diversity=diversity,
        diversity_mean=diversity_mean,
        pearson_by_mode=pearson_by_mode,
        pearson_pooled=pearson_pooled,
        unknown_rate=unknown_rate,
        notes=notes,
        pearson_per_prompt=pearson_per_prompt,
    )
