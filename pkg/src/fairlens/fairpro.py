"""Self-audited meta-prompting mitigation.

For each user prompt, a meta instruction asks a chat model to reason about the
stereotypes the prompt could trigger and to emit a fairness-promoting system
prompt in a machine-parseable envelope: either a tagged block
(<system_prompt>...</system_prompt>) or a last-line marker (the output ends
with a line reading exactly "User Prompt:"). The parsed system prompt replaces
the model's default system prompt at generation time.

Ablation modes reuse the same building blocks: `fixed` drops the user prompt
and the bias analysis, `no-user-prompt` drops only the user prompt, `no-cot`
drops the analysis step, `two-calls` splits analysis and synthesis into two
chat calls, and `user-prompt-rewrite` asks for a rewritten user prompt instead
of a system prompt (the default system prompt is kept). `default` and `none`
are pass-through modes with no meta call at all.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from enum import Enum

from .errors import NotApplicable, ParseFailed
from .modelio.endpoints import ChatRequest
from .resources import load_meta_blocks

log = logging.getLogger(__name__)


class PromptMode(str, Enum):
    DEFAULT = "default"
    NONE = "none"
    FIXED = "fixed"
    NO_USER_PROMPT = "no-user-prompt"
    NO_COT = "no-cot"
    TWO_CALLS = "two-calls"
    FAIRPRO = "fairpro"
    USER_PROMPT_REWRITE = "user-prompt-rewrite"


MITIGATION_MODES = frozenset(
    {
        PromptMode.FIXED,
        PromptMode.NO_USER_PROMPT,
        PromptMode.NO_COT,
        PromptMode.TWO_CALLS,
        PromptMode.FAIRPRO,
        PromptMode.USER_PROMPT_REWRITE,
    }
)


class OutputFormat(str, Enum):
    TAGGED_BLOCK = "tagged-block"
    LAST_LINE_MARKER = "last-line-marker"


MARKER_LINE = "User Prompt:"

# Lines a model might emit to label its final answer in marker format; they
# are stripped from the payload and everything above them becomes reasoning.
_PREAMBLE_RE = re.compile(
    r"^\s*(final |revised |new |updated )?(system (instruction|prompt)|instruction|output)\s*[:\-]?\s*$",
    re.IGNORECASE,
)


@dataclass(frozen=True)
class FairPromptResult:
    """Outcome of one meta-prompting exchange for one user prompt."""

    mode: PromptMode
    user_prompt: str
    system_prompt: str | None
    reasoning: str
    raw_output: str
    fallback: bool = False
    n_calls: int = 0
    rewritten_user_prompt: str | None = None

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "user_prompt": self.user_prompt,
            "system_prompt": self.system_prompt,
            "reasoning": self.reasoning,
            "raw_output": self.raw_output,
            "fallback": self.fallback,
            "n_calls": self.n_calls,
            "rewritten_user_prompt": self.rewritten_user_prompt,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FairPromptResult":
        return cls(
            mode=PromptMode(data["mode"]),
            user_prompt=data["user_prompt"],
            system_prompt=data.get("system_prompt"),
            reasoning=data.get("reasoning", ""),
            raw_output=data.get("raw_output", ""),
            fallback=data.get("fallback", False),
            n_calls=data.get("n_calls", 0),
            rewritten_user_prompt=data.get("rewritten_user_prompt"),
        )


def _output_block(blocks: dict, output_format: OutputFormat) -> str:
    if output_format is OutputFormat.TAGGED_BLOCK:
        return blocks["output_tagged_block"]
    return blocks["output_last_line_marker"]


def build_meta(
    user_prompt: str,
    mode: PromptMode,
    output_format: OutputFormat = OutputFormat.TAGGED_BLOCK,
) -> str:
    """Assemble the meta instruction sent to the chat model.

    For two-calls this is the first (analysis) call; see two_call_followup.
    """
    mode = PromptMode(mode)
    if mode not in MITIGATION_MODES:
        raise NotApplicable(f"mode {mode.value!r} does not use a meta instruction")
    blocks = load_meta_blocks()
    user_block = blocks["user_prompt_block"].format(user_prompt=user_prompt)
    if mode is PromptMode.FAIRPRO:
        parts = [blocks["header"], user_block, blocks["analysis_block"],
                 blocks["directive"], _output_block(blocks, output_format)]
    elif mode is PromptMode.NO_COT:
        parts = [blocks["header"], user_block, blocks["directive_no_cot"],
                 _output_block(blocks, output_format)]
    elif mode is PromptMode.NO_USER_PROMPT:
        parts = [blocks["header"], blocks["analysis_block_no_user_prompt"],
                 blocks["directive"], _output_block(blocks, output_format)]
    elif mode is PromptMode.FIXED:
        parts = [blocks["header"], blocks["directive_fixed"],
                 _output_block(blocks, output_format)]
    elif mode is PromptMode.TWO_CALLS:
        parts = [blocks["header"], user_block, blocks["analysis_block"],
                 blocks["two_calls_analysis_directive"]]
    else:  # USER_PROMPT_REWRITE always uses the tagged user-prompt envelope
        parts = [blocks["header"], user_block, blocks["analysis_block"],
                 blocks["directive_rewrite"], blocks["output_tagged_block_rewrite"]]
    return "\n\n".join(parts)


def two_call_followup(
    analysis: str, output_format: OutputFormat = OutputFormat.TAGGED_BLOCK
) -> str:
    """The second two-calls instruction, fed with the first call's analysis."""
    blocks = load_meta_blocks()
    followup = blocks["two_calls_followup_block"].format(analysis=analysis)
    return "\n\n".join(
        [blocks["header"], followup, blocks["directive"],
         _output_block(blocks, output_format)]
    )


def parse_fair_output(
    raw: str,
    output_format: OutputFormat,
    payload_tag: str = "system_prompt",
) -> tuple[str, str]:
    """Split a meta response into (reasoning, payload).

    Tagged block: the innermost span of the last <tag>...</tag> pair; text
    before the opening tag is reasoning. Last-line marker: everything after a
    recognized preamble line up to the final "User Prompt:" line.
    """
    if output_format is OutputFormat.TAGGED_BLOCK:
        open_tag, close_tag = f"<{payload_tag}>", f"</{payload_tag}>"
        start = raw.rfind(open_tag)
        if start < 0:
            raise ParseFailed(f"missing {open_tag}", raw=raw)
        end = raw.find(close_tag, start + len(open_tag))
        if end < 0:
            raise ParseFailed(f"missing {close_tag}", raw=raw)
        payload = raw[start + len(open_tag):end].strip()
        if not payload:
            raise ParseFailed("empty payload between tags", raw=raw)
        return raw[:start].strip(), payload

    lines = raw.splitlines()
    marker_idx = None
    for i, line in enumerate(lines):
        if line.strip() == MARKER_LINE:
            marker_idx = i
    if marker_idx is None:
        raise ParseFailed(f"missing final {MARKER_LINE!r} line", raw=raw)
    head = lines[:marker_idx]
    preamble_idx = None
    for i, line in enumerate(head):
        if _PREAMBLE_RE.match(line):
            preamble_idx = i
    if preamble_idx is None:
        reasoning_lines: list[str] = []
        payload_lines = head
    else:
        reasoning_lines = head[:preamble_idx]
        payload_lines = head[preamble_idx + 1:]
    payload = "\n".join(payload_lines).strip()
    if not payload:
        raise ParseFailed("empty payload before marker line", raw=raw)
    return "\n".join(reasoning_lines).strip(), payload


def fair_system_prompt(
    user_prompt: str,
    chat,
    mode: PromptMode = PromptMode.FAIRPRO,
    output_format: OutputFormat = OutputFormat.TAGGED_BLOCK,
    temperature: float = 0.7,
    seed: int = 0,
) -> FairPromptResult:
    """Run the meta exchange for one user prompt.

    One chat call per attempt (two for two-calls). A parse failure retries
    once with a fresh seed; a second failure returns a fallback result that
    keeps the default system prompt.
    """
    mode = PromptMode(mode)
    if mode not in MITIGATION_MODES:
        raise NotApplicable(f"mode {mode.value!r} has no meta exchange")
    chat_fn = chat.chat if hasattr(chat, "chat") else chat
    payload_tag = (
        "user_prompt" if mode is PromptMode.USER_PROMPT_REWRITE else "system_prompt"
    )
    fmt = (
        OutputFormat.TAGGED_BLOCK
        if mode is PromptMode.USER_PROMPT_REWRITE
        else output_format
    )
    n_calls = 0

    def attempt(attempt_seed: int) -> tuple[str, str, str]:
        nonlocal n_calls
        if mode is PromptMode.TWO_CALLS:
            first = chat_fn(
                ChatRequest(
                    user_prompt=build_meta(user_prompt, mode, fmt),
                    temperature=temperature,
                    seed=attempt_seed,
                )
            )
            n_calls += 1
            raw = chat_fn(
                ChatRequest(
                    user_prompt=two_call_followup(first.text, fmt),
                    temperature=temperature,
                    seed=attempt_seed,
                )
            ).text
            n_calls += 1
        else:
            raw = chat_fn(
                ChatRequest(
                    user_prompt=build_meta(user_prompt, mode, fmt),
                    temperature=temperature,
                    seed=attempt_seed,
                )
            ).text
            n_calls += 1
        reasoning, payload = parse_fair_output(raw, fmt, payload_tag)
        return raw, reasoning, payload

    try:
        raw, reasoning, payload = attempt(seed)
    except ParseFailed as first_failure:
        log.warning("meta output parse failed for %r, retrying: %s",
                    user_prompt, first_failure)
        try:
            raw, reasoning, payload = attempt(seed + 1)
        except ParseFailed as second_failure:
            log.warning("meta output parse failed twice for %r; FallbackToDefault",
                        user_prompt)
            return FairPromptResult(
                mode=mode,
                user_prompt=user_prompt,
                system_prompt=None,
                reasoning="",
                raw_output=second_failure.raw,
                fallback=True,
                n_calls=n_calls,
            )
    if mode is PromptMode.USER_PROMPT_REWRITE:
        return FairPromptResult(
            mode=mode,
            user_prompt=user_prompt,
            system_prompt=None,
            reasoning=reasoning,
            raw_output=raw,
            n_calls=n_calls,
            rewritten_user_prompt=payload,
        )
    return FairPromptResult(
        mode=mode,
        user_prompt=user_prompt,
        system_prompt=payload,
        reasoning=reasoning,
        raw_output=raw,
        n_calls=n_calls,
    )


def assemble_generation_inputs(
    mode: PromptMode,
    user_prompt: str,
    default_system_prompt: str | None,
    fair: FairPromptResult | None = None,
) -> tuple[str | None, str]:
    """(system_prompt, user_prompt) actually sent to the image endpoint."""
    mode = PromptMode(mode)
    if mode is PromptMode.DEFAULT:
        return default_system_prompt, user_prompt
    if mode is PromptMode.NONE:
        return None, user_prompt
    if fair is None:
        raise ValueError(f"mode {mode.value!r} needs a FairPromptResult")
    if fair.fallback:
        return default_system_prompt, user_prompt
    if mode is PromptMode.USER_PROMPT_REWRITE:
        return default_system_prompt, fair.rewritten_user_prompt or user_prompt
    return fair.system_prompt, user_prompt
