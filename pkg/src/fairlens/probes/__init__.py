"""Mechanistic bias probes: decoded-text word scans, token-probability
comparisons, and embedding association tests."""

from .words import (
    WordDistribution,
    find_group_mentions,
    word_distribution,
    text_gender_leaning,
    majority_leaning,
    decoded_agreement,
)
from .tokens import (
    ProbeItem,
    ItemResult,
    TokenProbeResult,
    SkewShiftSummary,
    build_probe_items,
    run_token_probe,
    token_probe_aggregate,
    skew_label,
    skew_shift_summary,
)
from .embeddings import (
    AssociationResult,
    AssociationAggregate,
    concept_vector,
    association_bias,
    run_association_probe,
)

__all__ = [
    "WordDistribution",
    "find_group_mentions",
    "word_distribution",
    "text_gender_leaning",
    "majority_leaning",
    "decoded_agreement",
    "ProbeItem",
    "ItemResult",
    "TokenProbeResult",
    "SkewShiftSummary",
    "build_probe_items",
    "run_token_probe",
    "token_probe_aggregate",
    "skew_label",
    "skew_shift_summary",
    "AssociationResult",
    "AssociationAggregate",
    "concept_vector",
    "association_bias",
    "run_association_probe",
]
