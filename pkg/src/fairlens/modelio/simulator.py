"""Deterministic offline model simulator.

One simulator instance can stand in for every endpoint role: image generator,
judge backend, chat rewriter/meta model, and embedder. All randomness derives
from sha256 over explicit inputs, never from call order, wall clock, or the
process hash seed, so identical requests always produce identical outputs.

Image generation draws each demographic class with inverse-CDF sampling on
u = sha256(occupation, seed, category). The system prompt changes outcomes
only by reshaping the prior: a fairness-aware system prompt (detected by
marker substrings) blends the occupation prior toward uniform by
fairness_sensitivity. A system prompt without markers leaves the prior
untouched, so "no system prompt" and a neutral default system prompt yield
byte-identical draws.

Chat requests are dispatched by shape: scripted overrides first, then
meta-instruction requests (return a fairness-promoting system prompt in the
requested envelope), then single-letter comparison probes (answer from
male_option_preference with exact log-probabilities), then plain decode or
rewrite behavior.
"""

from __future__ import annotations

import hashlib
import math
import re
import threading
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..errors import ConfigError
from ..jsonutil import canonical_json, digest_obj
from ..taxonomy import Taxonomy
from .endpoints import ChatRequest, ChatResult

DEFAULT_FAIRNESS_MARKERS = ("diverse", "diversity", "inclusiv", "stereotype", "fair")
_REWRITE_BEHAVIORS = ("echo", "verbose", "inject_demographic")

_PROBE_INSTRUCTION = "Answer with a single letter: A or B."
_META_MARKER = "design a fair instruction"
_TWO_CALL_STOP = "Do not write the new system prompt yet."
_USER_PROMPT_LABEL = "Consider the following user prompt:"

_MALE_WORDS = ("male", "man", "boy", "he", "him", "his")
_FEMALE_WORDS = ("female", "woman", "girl", "she", "her", "hers")


def _unit_interval(*parts: str) -> float:
    """Map the given strings to a deterministic float in [0, 1)."""
    raw = "\x1f".join(parts).encode("utf-8")
    digest = hashlib.sha256(raw).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


def _hash_embedding(text: str, dim: int) -> np.ndarray:
    seed_bytes = hashlib.sha256(f"embed\x1f{text}".encode("utf-8")).digest()
    seed = int.from_bytes(seed_bytes[:8], "big")
    rng = np.random.Generator(np.random.PCG64(seed))
    vec = rng.standard_normal(dim)
    return vec / np.linalg.norm(vec)


@dataclass(frozen=True)
class SimulatedModelSpec:
    """Behavior table for a simulator instance.

    priors: occupation -> category -> class -> probability. Occupations not
    listed use default_prior; with no default_prior the draw is uniform.
    """

    priors: Mapping[str, Mapping[str, Mapping[str, float]]] = field(default_factory=dict)
    default_prior: Mapping[str, Mapping[str, float]] | None = None
    fairness_sensitivity: float = 0.0
    fairness_markers: tuple[str, ...] = DEFAULT_FAIRNESS_MARKERS
    rewrite_behavior: str = "echo"
    male_option_preference: Mapping[str, float] = field(default_factory=dict)
    default_male_option_preference: float = 0.5
    system_prompt_moderation: float = 0.0
    position_preference: float | None = None
    scripted_responses: tuple[tuple[str, str], ...] = ()
    embedding_dim: int = 32

    def __post_init__(self):
        if not 0.0 <= self.fairness_sensitivity <= 1.0:
            raise ConfigError("fairness_sensitivity must be in [0, 1]")
        if not 0.0 <= self.system_prompt_moderation <= 1.0:
            raise ConfigError("system_prompt_moderation must be in [0, 1]")
        if self.rewrite_behavior not in _REWRITE_BEHAVIORS:
            raise ConfigError(f"rewrite_behavior must be one of {_REWRITE_BEHAVIORS}")
        if self.position_preference is not None and not 0.0 <= self.position_preference <= 1.0:
            raise ConfigError("position_preference must be in [0, 1]")
        if self.embedding_dim < 2:
            raise ConfigError("embedding_dim must be >= 2")
        for pref in list(self.male_option_preference.values()) + [
            self.default_male_option_preference
        ]:
            if not 0.0 <= pref <= 1.0:
                raise ConfigError("option preferences must be in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "priors": {
                occ: {cat: dict(classes) for cat, classes in cats.items()}
                for occ, cats in self.priors.items()
            },
            "default_prior": (
                None
                if self.default_prior is None
                else {cat: dict(cls) for cat, cls in self.default_prior.items()}
            ),
            "fairness_sensitivity": self.fairness_sensitivity,
            "fairness_markers": list(self.fairness_markers),
            "rewrite_behavior": self.rewrite_behavior,
            "male_option_preference": dict(self.male_option_preference),
            "default_male_option_preference": self.default_male_option_preference,
            "system_prompt_moderation": self.system_prompt_moderation,
            "position_preference": self.position_preference,
            "scripted_responses": [list(pair) for pair in self.scripted_responses],
            "embedding_dim": self.embedding_dim,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "SimulatedModelSpec":
        known = {
            "priors", "default_prior", "fairness_sensitivity", "fairness_markers",
            "rewrite_behavior", "male_option_preference",
            "default_male_option_preference", "system_prompt_moderation",
            "position_preference", "scripted_responses", "embedding_dim",
        }
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown simulator spec fields: {sorted(extra)}")
        kwargs = dict(data)
        if "fairness_markers" in kwargs:
            kwargs["fairness_markers"] = tuple(kwargs["fairness_markers"])
        if "scripted_responses" in kwargs:
            kwargs["scripted_responses"] = tuple(
                (pair[0], pair[1]) for pair in kwargs["scripted_responses"]
            )
        return cls(**kwargs)

    @property
    def digest(self) -> str:
        return digest_obj(self.to_dict())


@dataclass(frozen=True)
class SimulatedGeneration:
    """Outcome of one simulated image request."""

    occupation: str | None
    classes: dict[str, str]
    image_embedding: np.ndarray
    digest: str


def _validate_prior(prior: Mapping[str, Mapping[str, float]], taxonomy: Taxonomy,
                    where: str) -> None:
    for category, classes in prior.items():
        expected = set(taxonomy.classes(category))
        if set(classes) != expected:
            raise ConfigError(
                f"{where}: prior for {category!r} must cover exactly {sorted(expected)}"
            )
        if any(p < 0 for p in classes.values()):
            raise ConfigError(f"{where}: negative probability in {category!r}")
        total = math.fsum(classes.values())
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"{where}: prior for {category!r} sums to {total}")


class SimulatedModel:
    """Offline stand-in for chat, embedding, image, and judge endpoints."""

    def __init__(self, spec: SimulatedModelSpec, taxonomy: Taxonomy | None = None):
        self.spec = spec
        self.taxonomy = taxonomy or Taxonomy.default()
        for occ, prior in spec.priors.items():
            _validate_prior(prior, self.taxonomy, f"priors[{occ!r}]")
        if spec.default_prior is not None:
            _validate_prior(spec.default_prior, self.taxonomy, "default_prior")
        self._occupation_patterns = [
            (occ, re.compile(r"\b" + re.escape(occ).replace(r"\ ", r"\s+") + r"\b",
                             re.IGNORECASE))
            for occ in sorted(spec.priors, key=lambda o: (-len(o), o))
        ]
        self._preference_patterns = [
            (occ, re.compile(r"\b" + re.escape(occ).replace(r"\ ", r"\s+") + r"\b",
                             re.IGNORECASE))
            for occ in sorted(spec.male_option_preference, key=lambda o: (-len(o), o))
        ]
        self._lock = threading.Lock()
        self.chat_calls = 0
        self.embed_calls = 0
        self.generate_calls = 0

    @property
    def identity(self) -> str:
        return f"simulator:{self.spec.digest}"

    # --- shared helpers -------------------------------------------------

    def _count(self, counter: str) -> None:
        with self._lock:
            setattr(self, counter, getattr(self, counter) + 1)

    def _is_fairness_aware(self, system_prompt: str | None) -> bool:
        if not system_prompt:
            return False
        lowered = system_prompt.lower()
        return any(marker in lowered for marker in self.spec.fairness_markers)

    def _detect_occupation(self, text: str) -> str | None:
        for occ, pattern in self._occupation_patterns:
            if pattern.search(text):
                return occ
        return None

    def _prior_for(self, occupation: str | None) -> Mapping[str, Mapping[str, float]]:
        if occupation is not None and occupation in self.spec.priors:
            return self.spec.priors[occupation]
        if self.spec.default_prior is not None:
            return self.spec.default_prior
        return {
            cat.name: {cls: 1.0 / len(cat.classes) for cls in cat.classes}
            for cat in self.taxonomy.categories
        }

    def _adjusted_prior(self, occupation: str | None, system_prompt: str | None
                        ) -> dict[str, dict[str, float]]:
        prior = self._prior_for(occupation)
        out: dict[str, dict[str, float]] = {}
        fair = self._is_fairness_aware(system_prompt)
        f = self.spec.fairness_sensitivity if fair else 0.0
        for cat in self.taxonomy.categories:
            classes = prior.get(cat.name)
            if classes is None:
                classes = {cls: 1.0 / len(cat.classes) for cls in cat.classes}
            u = 1.0 / len(cat.classes)
            out[cat.name] = {
                cls: (1.0 - f) * classes[cls] + f * u for cls in cat.classes
            }
        return out

    def _draw_class(self, occupation: str | None, seed: int, category: str,
                    probs: Mapping[str, float]) -> str:
        u = _unit_interval(occupation or "", str(seed), category)
        cumulative = 0.0
        ordered = self.taxonomy.classes(category)
        for cls in ordered:
            cumulative += probs[cls]
            if u < cumulative:
                return cls
        return ordered[-1]

    # --- image generation -------------------------------------------------

    def generate(self, system_prompt: str | None, user_prompt: str, seed: int
                 ) -> SimulatedGeneration:
        self._count("generate_calls")
        occupation = self._detect_occupation(user_prompt)
        adjusted = self._adjusted_prior(occupation, system_prompt)
        classes = {
            cat.name: self._draw_class(occupation, seed, cat.name, adjusted[cat.name])
            for cat in self.taxonomy.categories
        }
        content = canonical_json(
            {"occupation": occupation, "seed": seed, "classes": classes}
        )
        embedding = _hash_embedding(
            f"image\x1f{occupation or ''}\x1f{canonical_json(classes)}",
            self.spec.embedding_dim,
        )
        return SimulatedGeneration(
            occupation=occupation,
            classes=classes,
            image_embedding=embedding,
            digest=hashlib.sha256(content.encode("utf-8")).hexdigest(),
        )

    # --- embeddings ---------------------------------------------------------

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            raise ValueError("texts must be non-empty")
        self._count("embed_calls")
        return [_hash_embedding(text, self.spec.embedding_dim) for text in texts]

    # --- chat ---------------------------------------------------------------

    def chat(self, request: ChatRequest) -> ChatResult:
        self._count("chat_calls")
        text = request.user_prompt
        for needle, response in self.spec.scripted_responses:
            if needle in text:
                return ChatResult(text=response)
        if _META_MARKER in text.lower():
            return self._meta_response(request)
        if _PROBE_INSTRUCTION in text and "\nA. " in f"\n{text}" and "\nB. " in text:
            return self._probe_response(request)
        return self._decode_response(request)

    # Meta-prompting: produce a fairness-promoting system prompt in whichever
    # output envelope the instruction asked for.
    def _meta_response(self, request: ChatRequest) -> ChatResult:
        text = request.user_prompt
        subject = None
        lines = text.splitlines()
        for i, line in enumerate(lines):
            if line.strip() == _USER_PROMPT_LABEL and i + 1 < len(lines):
                subject = lines[i + 1].strip()
                break
        topic = subject if subject else "the subject"
        if _TWO_CALL_STOP in text:
            return ChatResult(
                text=(
                    f"Potential issues: portrayals of {topic} may default to a "
                    "single gender, age group, ethnicity, and body type, "
                    "reflecting occupational stereotypes."
                )
            )
        analysis = (
            f"The prompt could evoke stereotyped portrayals of {topic}; a single "
            "default demographic might dominate the output."
        )
        fair_prompt = (
            f"Describe {topic} with accurate, concrete visual detail while "
            "ensuring diverse and inclusive representation across genders, ages, "
            "ethnicities, and body types, avoiding stereotypes."
        )
        if "<user_prompt>" in text:
            rewritten = f"{topic}, portrayed with diverse and inclusive representation"
            return ChatResult(
                text=f"{analysis}\n<user_prompt>\n{rewritten}\n</user_prompt>"
            )
        if "<system_prompt>" in text:
            return ChatResult(
                text=f"{analysis}\n<system_prompt>\n{fair_prompt}\n</system_prompt>"
            )
        # Last-line-marker envelope: instruction only, marker line last.
        return ChatResult(text=f"{fair_prompt}\nUser Prompt: ")

    def _probe_response(self, request: ChatRequest) -> ChatResult:
        text = request.user_prompt
        option_a = option_b = ""
        for line in text.splitlines():
            if line.startswith("A. "):
                option_a = line[3:]
            elif line.startswith("B. "):
                option_b = line[3:]
        if self.spec.position_preference is not None:
            p_a = self.spec.position_preference
        else:
            preference = self.spec.default_male_option_preference
            for occ, pattern in self._preference_patterns:
                if pattern.search(text):
                    preference = self.spec.male_option_preference[occ]
                    break
            preference = self._moderated_preference(preference, request.system_prompt)
            gender_a = self._option_gender(option_a)
            gender_b = self._option_gender(option_b)
            if gender_a == "male" and gender_b == "female":
                p_a = preference
            elif gender_a == "female" and gender_b == "male":
                p_a = 1.0 - preference
            else:
                p_a = 0.5
        p_a = min(max(p_a, 1e-12), 1.0 - 1e-12)
        if request.temperature > 0.0:
            draw = _unit_interval("probe-answer", request.user_prompt,
                                  str(request.seed))
            answer = "A" if draw < p_a else "B"
        else:
            answer = "A" if p_a >= 0.5 else "B"
        logprobs = None
        if request.top_logprobs is not None:
            logprobs = {"A": math.log(p_a), "B": math.log(1.0 - p_a)}
        return ChatResult(text=answer, token_logprobs=logprobs)

    def _moderated_preference(self, preference: float, system_prompt: str | None
                              ) -> float:
        if self._is_fairness_aware(system_prompt):
            f = self.spec.fairness_sensitivity
            return (1.0 - f) * preference + f * 0.5
        if system_prompt:
            m = self.spec.system_prompt_moderation
            return 0.5 + (preference - 0.5) * (1.0 - m)
        return preference

    @staticmethod
    def _option_gender(option: str) -> str | None:
        lowered = option.lower()
        male = any(re.search(rf"\b{w}\b", lowered) for w in _MALE_WORDS)
        female = any(re.search(rf"\b{w}\b", lowered) for w in _FEMALE_WORDS)
        if male and not female:
            return "male"
        if female and not male:
            return "female"
        return None

    # Plain chat: decode / rewrite behavior over the last non-empty line of
    # the request (rewrite instructions put the payload prompt there).
    def _decode_response(self, request: ChatRequest) -> ChatResult:
        if self.spec.rewrite_behavior == "echo":
            return ChatResult(text=request.user_prompt)
        base = request.user_prompt.strip()
        for line in reversed(request.user_prompt.splitlines()):
            if line.strip():
                base = line.strip()
                break
        detail = (
            f"{base}, shown in a detailed setting with natural lighting "
            "and balanced composition."
        )
        if self.spec.rewrite_behavior == "verbose":
            return ChatResult(text=detail)
        occupation = self._detect_occupation(request.user_prompt)
        adjusted = self._adjusted_prior(occupation, request.system_prompt)
        if "gender" not in adjusted:
            return ChatResult(text=detail)
        seed = request.seed if request.seed is not None else 0
        gender = self._draw_class(occupation, seed, "gender", adjusted["gender"])
        if gender == "male":
            phrase = "A man stands at the center of the scene, focused on his work."
        else:
            phrase = "A woman stands at the center of the scene, focused on her work."
        return ChatResult(text=f"{detail} {phrase}")
