"""Fair-discrepancy metric, correlation, and report aggregation."""

from __future__ import annotations

import math
import random

import numpy as np
import pytest
import scipy.stats
from hypothesis import given
from hypothesis import strategies as st

from fairlens.corpus import Prompt, PromptSet, build_occupation_prompts
from fairlens.errors import (
    EmbeddingShapeError,
    EmptyDistribution,
    NoDataForCategory,
    NotEnoughSamples,
    UndefinedCorrelation,
)
from fairlens.metrics import (
    ALL_LEVELS,
    AttributeDistribution,
    aggregate_report,
    alignment_score,
    empirical_distribution,
    fd_bias,
    mean_or_none,
    normalization_factor,
    pairwise_diversity,
    pearson,
)

from oracles import normalization_factor_decimal, pearson_raw_moments


def dist(probs, category="gender", n_samples=10):
    support = tuple(f"c{i}" for i in range(len(probs)))
    return AttributeDistribution(
        category=category, support=support, probs=tuple(probs), n_samples=n_samples
    )


class TestFdBias:
    def test_two_class_point_value(self):
        score = fd_bias([dist((0.7, 0.3))])
        assert score.raw == pytest.approx(math.sqrt(0.08), abs=1e-12)
        assert score.normalized == pytest.approx(0.4, abs=1e-12)
        assert score.n_classes == 2
        assert score.n_prompts == 1

    def test_uniform_is_zero(self):
        for n in range(2, 8):
            score = fd_bias([dist([1.0 / n] * n)])
            assert score.raw == pytest.approx(0.0, abs=1e-12)
            assert score.normalized == pytest.approx(0.0, abs=1e-12)

    def test_one_hot_is_one(self):
        for n in range(2, 8):
            probs = [0.0] * n
            probs[n // 2] = 1.0
            score = fd_bias([dist(probs)])
            assert score.normalized == pytest.approx(1.0, abs=1e-12)
            assert score.raw == pytest.approx(normalization_factor(n), abs=1e-12)

    def test_mean_over_prompts(self):
        d1, d2 = dist((0.75, 0.25)), dist((0.0, 1.0))
        separate = [fd_bias([d]).raw for d in (d1, d2)]
        combined = fd_bias([d1, d2])
        assert combined.raw == pytest.approx(sum(separate) / 2, abs=1e-12)
        assert combined.normalized == pytest.approx(
            combined.raw / normalization_factor(2), abs=1e-12
        )
        assert combined.n_prompts == 2

    def test_two_class_closed_form(self):
        for p in (0.0, 0.1, 0.3, 0.5, 0.62, 0.9, 1.0):
            score = fd_bias([dist((p, 1.0 - p))])
            assert score.normalized == pytest.approx(2 * abs(p - 0.5), abs=1e-12)

    def test_requires_shared_support_and_category(self):
        with pytest.raises(ValueError):
            fd_bias([dist((1.0, 0.0)), dist((1.0, 0.0), category="age")])
        with pytest.raises(ValueError):
            fd_bias([dist((1.0, 0.0)), dist((1.0, 0.0, 0.0))])

    def test_empty_input(self):
        with pytest.raises(NoDataForCategory):
            fd_bias([])

    def test_unknown_rate_carried(self):
        score = fd_bias([dist((0.5, 0.5))], unknown_rate=0.25)
        assert score.unknown_rate == 0.25


@given(
    st.integers(min_value=2, max_value=8).flatmap(
        lambda n: st.lists(
            st.floats(min_value=0.0, max_value=1.0, allow_nan=False),
            min_size=n,
            max_size=n,
        ).filter(lambda xs: sum(xs) > 1e-6)
    )
)
def test_normalized_fd_stays_in_unit_interval(raw_probs):
    total = math.fsum(raw_probs)
    probs = [x / total for x in raw_probs]
    score = fd_bias([dist(probs)])
    assert -1e-12 <= score.normalized <= 1.0 + 1e-12


@given(
    st.integers(min_value=2, max_value=6).flatmap(
        lambda n: st.tuples(
            st.lists(
                st.floats(min_value=0.0, max_value=1.0, allow_nan=False),
                min_size=n,
                max_size=n,
            ).filter(lambda xs: sum(xs) > 1e-6),
            st.randoms(use_true_random=False),
        )
    )
)
def test_fd_invariant_under_class_permutation(case):
    raw_probs, rng = case
    total = math.fsum(raw_probs)
    probs = [x / total for x in raw_probs]
    shuffled = list(probs)
    rng.shuffle(shuffled)
    base = fd_bias([dist(probs)])
    perm = fd_bias([dist(shuffled)])
    assert perm.raw == pytest.approx(base.raw, abs=1e-12)
    assert perm.normalized == pytest.approx(base.normalized, abs=1e-12)


class TestNormalizationFactor:
    def test_against_decimal_arithmetic(self):
        for n in range(2, 11):
            multiplier = 1.0 / normalization_factor(n)
            assert multiplier == pytest.approx(
                normalization_factor_decimal(n), abs=1e-12
            )

    def test_two_classes_is_sqrt_two(self):
        assert 1.0 / normalization_factor(2) == pytest.approx(
            math.sqrt(2.0), abs=1e-12
        )

    def test_rejects_degenerate_cardinality(self):
        for n in (1, 0, -3):
            with pytest.raises(ValueError):
                normalization_factor(n)


class TestAttributeDistribution:
    def test_validates_shape_and_mass(self):
        with pytest.raises(ValueError):
            dist((0.5, 0.6))
        with pytest.raises(ValueError):
            AttributeDistribution("gender", ("a", "b"), (0.9,), 1)
        with pytest.raises(ValueError):
            AttributeDistribution("gender", ("a", "b"), (-0.1, 1.1), 1)


class TestEmpiricalDistribution:
    def test_counts_and_renormalizes_unknown(self, annotation_factory):
        records = [
            annotation_factory("p", seed, {"gender": label})
            for seed, label in enumerate(["male", "male", "male", "female", "unknown"])
        ]
        d = empirical_distribution(records, "gender", ("male", "female"))
        assert d.probs == (0.75, 0.25)
        assert d.n_samples == 4

    def test_missing_category_is_skipped(self, annotation_factory):
        records = [annotation_factory("p", 0, {"age": "adult"})]
        with pytest.raises(NoDataForCategory):
            empirical_distribution(records, "gender", ("male", "female"))

    def test_all_unknown_raises_empty(self, annotation_factory):
        records = [
            annotation_factory("p", s, {"gender": "unknown"}) for s in range(3)
        ]
        with pytest.raises(EmptyDistribution):
            empirical_distribution(records, "gender", ("male", "female"))

    def test_label_outside_support_rejected(self, annotation_factory):
        records = [annotation_factory("p", 0, {"gender": "robot"})]
        with pytest.raises(ValueError):
            empirical_distribution(records, "gender", ("male", "female"))


class TestAlignmentAndDiversity:
    def test_alignment_is_dot_product(self):
        a = np.array([1.0, 0.0])
        b = np.array([0.6, 0.8])
        assert alignment_score(a, b) == pytest.approx(0.6, abs=1e-12)

    def test_alignment_shape_guard(self):
        with pytest.raises(EmbeddingShapeError):
            alignment_score(np.array([1.0, 0.0]), np.array([1.0, 0.0, 0.0]))
        with pytest.raises(EmbeddingShapeError):
            alignment_score(np.ones((2, 2)), np.ones((2, 2)))

    def test_diversity_all_pairs_mean(self):
        embs = [
            np.array([1.0, 0.0]),
            np.array([0.0, 1.0]),
            np.array([0.6, 0.8]),
        ]
        expected = np.mean([0.0, 0.6, 0.8])
        got = pairwise_diversity(embs, n_pairs=10, seed=0)
        assert got == pytest.approx(expected, abs=1e-12)

    def test_diversity_sampling_deterministic(self):
        rng = np.random.default_rng(7)
        embs = []
        for _ in range(9):
            v = rng.standard_normal(5)
            embs.append(v / np.linalg.norm(v))
        a = pairwise_diversity(embs, n_pairs=4, seed=11)
        b = pairwise_diversity(embs, n_pairs=4, seed=11)
        assert a == b

    def test_diversity_needs_two_samples(self):
        with pytest.raises(NotEnoughSamples):
            pairwise_diversity([np.array([1.0, 0.0])])


class TestPearson:
    def test_perfect_lines(self):
        assert pearson((1, 2, 3), (2, 4, 6)) == pytest.approx(1.0, abs=1e-12)
        assert pearson((1, 2, 3), (3, 2, 1)) == pytest.approx(-1.0, abs=1e-12)

    def test_matches_raw_moment_formula_and_scipy(self):
        rng = random.Random(42)
        for _ in range(50):
            n = rng.randint(3, 20)
            xs = [rng.uniform(-5, 5) for _ in range(n)]
            ys = [rng.uniform(-5, 5) for _ in range(n)]
            r = pearson(xs, ys)
            assert r == pytest.approx(pearson_raw_moments(xs, ys), abs=1e-9)
            assert r == pytest.approx(scipy.stats.pearsonr(xs, ys)[0], abs=1e-9)

    def test_undefined_when_variance_zero(self):
        with pytest.raises(UndefinedCorrelation):
            pearson((1.0, 1.0, 1.0), (1.0, 2.0, 3.0))
        with pytest.raises(UndefinedCorrelation):
            pearson((1.0, 2.0, 3.0), (5.0, 5.0, 5.0))

    def test_input_validation(self):
        with pytest.raises(ValueError):
            pearson((1.0, 2.0), (1.0,))
        with pytest.raises(ValueError):
            pearson((1.0,), (2.0,))


@given(
    st.lists(
        st.tuples(
            st.floats(min_value=-100, max_value=100, allow_nan=False),
            st.floats(min_value=-100, max_value=100, allow_nan=False),
        ),
        min_size=3,
        max_size=12,
    ).filter(
        lambda pts: len({round(x, 9) for x, _ in pts}) > 1
        and len({round(y, 9) for _, y in pts}) > 1
    )
)
def test_pearson_symmetry_and_self_correlation(points):
    xs = [x for x, _ in points]
    ys = [y for _, y in points]
    try:
        r_xy = pearson(xs, ys)
        r_yx = pearson(ys, xs)
    except UndefinedCorrelation:
        return
    assert r_xy == pytest.approx(r_yx, abs=1e-9)
    assert pearson(xs, xs) == pytest.approx(1.0, abs=1e-9)
    shifted = [3.0 * x + 2.0 for x in xs]
    assert pearson(shifted, ys) == pytest.approx(r_xy, abs=1e-6)


def test_mean_or_none():
    assert mean_or_none([]) is None
    assert mean_or_none([1.0, 2.0, 4.0]) == pytest.approx(7.0 / 3.0)


def labels_for(gender, age="adult", ethnicity="white", appearance="slim"):
    return {
        "gender": gender,
        "age": age,
        "ethnicity": ethnicity,
        "appearance": appearance,
    }


class TestAggregateReport:
    def occupation_set(self, taxonomy):
        prompts = build_occupation_prompts(["a welder", "a florist"])
        return PromptSet(taxonomy=taxonomy, prompts=tuple(prompts))

    def test_hand_computed_cells(self, taxonomy, annotation_factory):
        prompt_set = self.occupation_set(taxonomy)
        welder = ["male", "male", "male", "female", "unknown"]
        records = [
            annotation_factory("occupation-welder", s, labels_for(g))
            for s, g in enumerate(welder)
        ] + [
            annotation_factory("occupation-florist", s, labels_for("female"))
            for s in range(5)
        ]
        report = aggregate_report(prompt_set, {"default": records})

        gender = report.bias["default"]["occupation"]["gender"]
        assert gender.normalized == pytest.approx(0.75, abs=1e-12)
        assert gender.raw == pytest.approx(
            (math.sqrt(0.125) + math.sqrt(0.5)) / 2, abs=1e-12
        )
        assert gender.n_prompts == 2
        assert gender.unknown_rate == pytest.approx(0.1, abs=1e-12)

        for category, n in (("age", 3), ("ethnicity", 7), ("appearance", 4)):
            cell = report.bias["default"]["occupation"][category]
            assert cell.normalized == pytest.approx(1.0, abs=1e-12)
            assert cell.n_classes == n

        assert report.bias_mean["default"]["occupation"] == pytest.approx(
            (0.75 + 3.0) / 4.0, abs=1e-12
        )
        assert report.bias["default"][ALL_LEVELS]["gender"].normalized == (
            pytest.approx(0.75, abs=1e-12)
        )
        assert report.unknown_rate["default"] == pytest.approx(1.0 / 40.0, abs=1e-12)
        assert report.pearson_by_mode["default"] is None
        assert any("too few level points" in note for note in report.notes)

    def test_all_unknown_prompt_excluded_with_note(
        self, taxonomy, annotation_factory
    ):
        prompt_set = self.occupation_set(taxonomy)
        records = [
            annotation_factory("occupation-welder", s, labels_for("unknown"))
            for s in range(5)
        ] + [
            annotation_factory("occupation-florist", s, labels_for("male"))
            for s in range(5)
        ]
        report = aggregate_report(prompt_set, {"default": records})
        gender = report.bias["default"]["occupation"]["gender"]
        assert gender.n_prompts == 1
        assert gender.normalized == pytest.approx(1.0, abs=1e-12)
        assert gender.unknown_rate == pytest.approx(0.5, abs=1e-12)
        assert any(
            "occupation-welder excluded (all labels Unknown)" in note
            for note in report.notes
        )

    def test_explicit_attribute_prompts_not_scored_for_that_category(
        self, taxonomy, annotation_factory
    ):
        prompts = (
            Prompt(
                id="simple-welder",
                level="simple",
                text="Male welder",
                occupation="a welder",
                explicit_attributes=(("gender", "male"),),
            ),
        )
        prompt_set = PromptSet(taxonomy=taxonomy, prompts=prompts)
        records = [
            annotation_factory(
                "simple-welder",
                s,
                {"age": "adult", "ethnicity": "white", "appearance": "slim"},
            )
            for s in range(4)
        ]
        report = aggregate_report(prompt_set, {"default": records})
        assert report.bias["default"]["simple"]["gender"] is None
        assert report.bias["default"]["simple"]["age"].normalized == pytest.approx(
            1.0, abs=1e-12
        )
        assert any("simple/gender: no scorable prompts" in n for n in report.notes)

    def test_alignment_diversity_and_pearson_points(
        self, taxonomy, annotation_factory
    ):
        occupation = build_occupation_prompts(["a welder"])[0]
        simple = Prompt(
            id="simple-welder",
            level="simple",
            text="Old welder",
            occupation="a welder",
            explicit_attributes=(("age", "old"),),
        )
        prompt_set = PromptSet(taxonomy=taxonomy, prompts=(occupation, simple))
        records = [
            annotation_factory(occupation.id, s, labels_for(g))
            for s, g in enumerate(["male", "male", "male", "female"])
        ] + [
            annotation_factory(simple.id, s, labels_for("male")) for s in range(4)
        ]
        image_embeddings = {
            "default": {
                occupation.id: [np.array([1.0, 0.0]), np.array([0.8, 0.6])],
                simple.id: [np.array([0.6, 0.8]), np.array([0.8, 0.6])],
            }
        }
        text_embeddings = {
            occupation.id: np.array([1.0, 0.0]),
            simple.id: np.array([0.0, 1.0]),
        }
        report = aggregate_report(
            prompt_set,
            {"default": records},
            image_embeddings=image_embeddings,
            text_embeddings=text_embeddings,
            diversity_pairs=8,
            per_prompt_pearson=True,
        )
        assert report.alignment["default"]["occupation"] == pytest.approx(
            0.9, abs=1e-12
        )
        assert report.alignment["default"]["simple"] == pytest.approx(0.7, abs=1e-12)
        assert report.diversity["default"]["occupation"] == pytest.approx(
            0.8, abs=1e-12
        )
        # occupation level: gender 0.5, age/ethnicity/appearance 1.0 -> 0.875;
        # simple level: age explicit, the other three one-hot -> 1.0.
        assert report.bias_mean["default"]["occupation"] == pytest.approx(
            0.875, abs=1e-12
        )
        assert report.bias_mean["default"]["simple"] == pytest.approx(1.0, abs=1e-12)
        # two points, bias up while alignment down -> exactly anticorrelated
        assert report.pearson_by_mode["default"] == pytest.approx(-1.0, abs=1e-9)
        assert report.pearson_pooled == pytest.approx(-1.0, abs=1e-9)
        assert "default" in report.pearson_per_prompt

    def test_per_prompt_pearson_hand_case(self, taxonomy, annotation_factory):
        prompt_set = self.occupation_set(taxonomy)
        records = [
            annotation_factory("occupation-welder", s, labels_for("male"))
            for s in range(4)
        ] + [
            annotation_factory(
                "occupation-florist",
                s,
                labels_for("male" if s < 2 else "female"),
            )
            for s in range(4)
        ]
        image_embeddings = {
            "default": {
                "occupation-welder": [np.array([1.0, 0.0])],
                "occupation-florist": [np.array([0.6, 0.8])],
            }
        }
        text_embeddings = {
            "occupation-welder": np.array([1.0, 0.0]),
            "occupation-florist": np.array([0.0, 1.0]),
        }
        report = aggregate_report(
            prompt_set,
            {"default": records},
            image_embeddings=image_embeddings,
            text_embeddings=text_embeddings,
            per_prompt_pearson=True,
        )
        # welder: every category one-hot -> mean bias 1.0, alignment 1.0;
        # florist: gender uniform -> mean bias 0.75, alignment 0.8.
        assert report.pearson_per_prompt["default"] == pytest.approx(1.0, abs=1e-12)

    def test_per_prompt_pearson_disabled_by_default(
        self, taxonomy, annotation_factory
    ):
        prompt_set = self.occupation_set(taxonomy)
        records = [
            annotation_factory("occupation-welder", 0, labels_for("male"))
        ]
        report = aggregate_report(prompt_set, {"default": records})
        assert report.pearson_per_prompt is None

    def test_to_dict_shape(self, taxonomy, annotation_factory):
        prompt_set = self.occupation_set(taxonomy)
        records = [
            annotation_factory("occupation-welder", s, labels_for("male"))
            for s in range(3)
        ]
        payload = aggregate_report(prompt_set, {"default": records}).to_dict()
        assert payload["pearson"]["by_mode"] == {"default": None}
        assert payload["pearson"]["pooled"] is None
        cell = payload["bias"]["default"]["occupation"]["gender"]
        assert set(cell) == {
            "category",
            "raw",
            "normalized",
            "n_classes",
            "n_prompts",
            "unknown_rate",
        }
