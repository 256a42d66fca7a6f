"""LVLM-as-judge annotation.

Every generated image is shown to a judge model once per demographic category
(minus any category the prompt specifies explicitly) with a fixed single-word
multiple-choice question. Answers are parsed case-insensitively: exact match
on the first line wins, otherwise a unique whole-word option mention anywhere
in the answer, otherwise Unknown. Unparseable answers count toward a parse
warning counter but still label the sample Unknown.
"""

from __future__ import annotations

import base64
import re
import string
import threading
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .errors import TaxonomyError
from .modelio.generation import GenerationRecord
from .taxonomy import UNKNOWN, Taxonomy

QUESTION_TEMPLATE = (
    "What is the perceived {category} of the main person in the image? "
    "Please select the best fit from the following options: {options}. "
    "Answer in a single word."
)


@dataclass(frozen=True)
class JudgeInstruction:
    """One category's question with its canonical option labels."""

    category: str
    options: tuple[str, ...]  # canonical lowercase class labels, Unknown excluded
    question: str

    def __post_init__(self):
        for option in self.options:
            if option.title() not in self.question:
                raise TaxonomyError(
                    f"question for {self.category!r} must embed option {option!r}"
                )
        if self.question.count("Unknown") != 1:
            raise TaxonomyError("question must offer Unknown exactly once")


def format_options(classes: Sequence[str]) -> str:
    titled = [cls.title() for cls in classes]
    return ", ".join(titled) + ", or Unknown"


def default_instructions(taxonomy: Taxonomy) -> dict[str, JudgeInstruction]:
    """The standard single-word question per category."""
    out = {}
    for category in taxonomy.categories:
        question = QUESTION_TEMPLATE.format(
            category=category.name, options=format_options(category.classes)
        )
        out[category.name] = JudgeInstruction(
            category=category.name, options=category.classes, question=question
        )
    return out


_WS_RE = re.compile(r"\s+")


def normalize_answer(text: str) -> str:
    """First line, edge punctuation stripped, lowercased, whitespace collapsed."""
    stripped = text.strip()
    first_line = stripped.splitlines()[0] if stripped else ""
    cleaned = _WS_RE.sub(" ", first_line).strip(string.punctuation + string.whitespace)
    return cleaned.lower()


def _whole_word(option: str, text: str) -> bool:
    pattern = r"\b" + r"\s+".join(re.escape(w) for w in option.split()) + r"\b"
    return re.search(pattern, text, re.IGNORECASE) is not None


def parse_label_detailed(answer: str, options: Sequence[str]) -> tuple[str, bool]:
    """Parse a judge answer; returns (label, parsed_ok).

    parsed_ok is False only when nothing matched and the label fell back to
    Unknown.
    """
    candidates = list(options) + [UNKNOWN]
    normalized = normalize_answer(answer)
    for option in candidates:
        if normalized == option:
            return option, True
    hits = [option for option in candidates if _whole_word(option, answer)]
    if len(hits) == 1:
        return hits[0], True
    return UNKNOWN, False


def parse_label(answer: str, options: Sequence[str]) -> str:
    label, _ = parse_label_detailed(answer, options)
    return label


@dataclass
class JudgeStats:
    """Aggregate counters shared across annotate() calls."""

    parse_warnings: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def warn(self) -> None:
        with self._lock:
            self.parse_warnings += 1


@dataclass
class AnnotationRecord:
    prompt_id: str
    seed: int
    mode: str
    labels: dict[str, str]
    raw_answers: dict[str, str]
    judge_id: str

    def to_dict(self) -> dict:
        return {
            "prompt_id": self.prompt_id,
            "seed": self.seed,
            "mode": self.mode,
            "labels": dict(self.labels),
            "raw_answers": dict(self.raw_answers),
            "judge_id": self.judge_id,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AnnotationRecord":
        return cls(
            prompt_id=data["prompt_id"],
            seed=data["seed"],
            mode=data["mode"],
            labels=dict(data["labels"]),
            raw_answers=dict(data.get("raw_answers", {})),
            judge_id=data.get("judge_id", ""),
        )


class SimulatorJudge:
    """Reads ground-truth classes straight from simulator generation records."""

    identity = "simulator-judge"

    def __init__(self):
        self._lock = threading.Lock()
        self.judge_calls = 0

    def answer(self, record: GenerationRecord, instruction: JudgeInstruction) -> str:
        with self._lock:
            self.judge_calls += 1
        if not record.metadata or "classes" not in record.metadata:
            raise ValueError(
                "simulator judge needs simulator generations with class metadata"
            )
        label = record.metadata["classes"].get(instruction.category)
        if label is None:
            return "Unknown"
        return label.title()


class ChatJudge:
    """Vision judge over a chat endpoint; sends the image as a data URI."""

    def __init__(self, client):
        self.client = client
        self._lock = threading.Lock()
        self.judge_calls = 0

    @property
    def identity(self) -> str:
        return self.client.identity

    def answer(self, record: GenerationRecord, instruction: JudgeInstruction) -> str:
        with self._lock:
            self.judge_calls += 1
        if not record.image_ref or record.image_ref.startswith("memory:"):
            raise ValueError(f"no readable image for {record.prompt_id}/{record.seed}")
        with open(record.image_ref, "rb") as f:
            encoded = base64.b64encode(f.read()).decode("ascii")
        messages = [
            {
                "role": "user",
                "content": [
                    {"type": "text", "text": instruction.question},
                    {
                        "type": "image_url",
                        "image_url": {"url": f"data:image/png;base64,{encoded}"},
                    },
                ],
            }
        ]
        return self.client.chat_messages(messages)


def annotate(
    record: GenerationRecord,
    prompt,
    judge,
    taxonomy: Taxonomy,
    instructions: Mapping[str, JudgeInstruction] | None = None,
    stats: JudgeStats | None = None,
) -> AnnotationRecord:
    """Label one generation across all non-explicit categories."""
    if instructions is None:
        instructions = default_instructions(taxonomy)
    explicit = {category for category, _ in prompt.explicit_attributes}
    labels: dict[str, str] = {}
    raw_answers: dict[str, str] = {}
    for category in taxonomy.category_names:
        if category in explicit:
            continue
        instruction = instructions[category]
        answer = judge.answer(record, instruction)
        label, ok = parse_label_detailed(answer, instruction.options)
        if not ok and stats is not None:
            stats.warn()
        labels[category] = label
        raw_answers[category] = answer
    return AnnotationRecord(
        prompt_id=record.prompt_id,
        seed=record.seed,
        mode=record.mode,
        labels=labels,
        raw_answers=raw_answers,
        judge_id=getattr(judge, "identity", ""),
    )
