"""Embedding association probe.

Builds gender concept vectors by averaging word embeddings for small male and
female word sets, then scores each occupation by the difference of cosine
similarities to the two concept vectors. Positive bias means the occupation
embedding sits closer to the male concept. Cosines are invariant under any
shared orthogonal transform of the embedding space.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from ..errors import EmbeddingShapeError, EndpointError, NoDataForCategory
from ..resources import load_lexicon
from ..textutil import strip_article

log = logging.getLogger(__name__)

EmbedFn = Callable[[Sequence[str]], list[np.ndarray]]


def concept_vector(words: Sequence[str], embed: EmbedFn) -> np.ndarray:
    """Unit-normalized mean of the word embeddings."""
    if not words:
        raise ValueError("concept needs at least one word")
    vectors = embed(list(words))
    if len(vectors) != len(words):
        raise EmbeddingShapeError("embedder returned wrong number of vectors")
    mean = np.mean(np.stack([np.asarray(v, dtype=np.float64) for v in vectors]), axis=0)
    norm = float(np.linalg.norm(mean))
    if norm < 1e-12:
        raise EmbeddingShapeError("concept words average to a zero vector")
    return mean / norm


def association_bias(
    target: np.ndarray, male_concept: np.ndarray, female_concept: np.ndarray
) -> float:
    """cos(target, male) - cos(target, female) for unit-normalized inputs."""
    t = np.asarray(target, dtype=np.float64)
    if t.shape != np.asarray(male_concept).shape:
        raise EmbeddingShapeError("target and concept dimensions differ")
    return float(np.dot(t, male_concept) - np.dot(t, female_concept))


@dataclass(frozen=True)
class AssociationResult:
    occupation: str
    bias: float


@dataclass(frozen=True)
class AssociationAggregate:
    n: int
    mean_abs_bias: float
    mean_bias: float


def run_association_probe(
    occupations: Sequence[str],
    embed: EmbedFn,
    concepts: Mapping[str, Sequence[str]] | None = None,
) -> tuple[list[AssociationResult], AssociationAggregate]:
    """Score every occupation against the gender concept axis.

    Occupations are embedded one at a time; an embedding failure skips that
    occupation with a warning. If every occupation fails, NoDataForCategory
    is raised. A failure while embedding the concept words is fatal, since
    without the axis nothing can be scored.
    """
    if not occupations:
        raise ValueError("no occupations to probe")
    if concepts is None:
        concepts = load_lexicon()["association_concepts"]
    male_vec = concept_vector(concepts["male"], embed)
    female_vec = concept_vector(concepts["female"], embed)
    nouns = [strip_article(o) for o in occupations]
    results = []
    for noun in nouns:
        try:
            (vec,) = embed([noun])
            bias = association_bias(vec, male_vec, female_vec)
        except (EndpointError, EmbeddingShapeError) as exc:
            log.warning("skipping occupation %r in association probe: %s", noun, exc)
            continue
        results.append(AssociationResult(occupation=noun, bias=bias))
    if not results:
        raise NoDataForCategory("every occupation failed to embed")
    aggregate = AssociationAggregate(
        n=len(results),
        mean_abs_bias=math.fsum(abs(r.bias) for r in results) / len(results),
        mean_bias=math.fsum(r.bias for r in results) / len(results),
    )
    return results, aggregate
