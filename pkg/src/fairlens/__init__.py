"""fairlens: demographic fairness auditing for text-to-image models.

The package builds a leveled occupation prompt benchmark, generates images
through an OpenAI-compatible endpoint (or a deterministic offline simulator),
labels perceived demographics with a judge model, scores the label
distributions with the Fair Discrepancy metric, probes the generator's
language surface for mechanistic bias signals, and applies self-audited
meta-prompting mitigation.
"""

from .corpus import LEVELS, Prompt, PromptSet, build_corpus, load_occupations
from .errors import FairlensError
from .fairpro import (
    FairPromptResult,
    OutputFormat,
    PromptMode,
    assemble_generation_inputs,
    fair_system_prompt,
)
from .judge import AnnotationRecord, ChatJudge, SimulatorJudge, annotate
from .metrics import (
    AttributeDistribution,
    BiasReport,
    BiasScore,
    aggregate_report,
    fd_bias,
    pearson,
)
from .pipeline import AuditResult, RunConfig, desk_preset, run_audit
from .taxonomy import Taxonomy

__version__ = "0.1.0"

__all__ = [
    "LEVELS",
    "Prompt",
    "PromptSet",
    "build_corpus",
    "load_occupations",
    "FairlensError",
    "FairPromptResult",
    "OutputFormat",
    "PromptMode",
    "assemble_generation_inputs",
    "fair_system_prompt",
    "AnnotationRecord",
    "ChatJudge",
    "SimulatorJudge",
    "annotate",
    "AttributeDistribution",
    "BiasReport",
    "BiasScore",
    "aggregate_report",
    "fd_bias",
    "pearson",
    "AuditResult",
    "RunConfig",
    "desk_preset",
    "run_audit",
    "Taxonomy",
    "__version__",
]
