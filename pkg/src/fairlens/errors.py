"""Exception types shared across the toolkit."""


class FairlensError(Exception):
    """Base class for all toolkit errors."""


class EmptyCorpus(FairlensError):
    """Raised when an occupation source yields no entries."""


class MissingAction(FairlensError):
    """Raised when a context action bank has no entry and no fallback."""


class RewriteFailed(FairlensError):
    """Raised when the rewriter endpoint fails for one prompt.

    Carries the prompt id; rewrites completed before the failure stay in the
    caller's cache, so a rerun only re-requests the missing ones.
    """

    def __init__(self, prompt_id: str, message: str = ""):
        super().__init__(message or f"rewrite failed for {prompt_id}")
        self.prompt_id = prompt_id


class TaxonomyError(FairlensError):
    """Raised when a demographic taxonomy fails validation."""


class EndpointError(FairlensError):
    """Raised when an HTTP endpoint fails after all retries."""


class LogprobsUnsupported(EndpointError):
    """Raised when a chat endpoint cannot return token log-probabilities."""


class EmbeddingShapeError(FairlensError):
    """Raised on embedding dimension mismatches or degenerate vectors."""


class EmptyDistribution(FairlensError):
    """Raised when every label for a category was Unknown."""


class NoDataForCategory(FairlensError):
    """Raised when no prompt contributes samples for a category."""


class NotEnoughSamples(FairlensError):
    """Raised when fewer than two embeddings are given for diversity."""


class UndefinedCorrelation(FairlensError):
    """Raised when a correlation input has zero variance."""


class InvalidDimension(FairlensError):
    """Raised when a word-distribution dimension is not in the lexicon."""


class KeyMismatch(FairlensError):
    """Raised when two keyed result sets that must align do not."""


class ParseFailed(FairlensError):
    """Raised when a meta-prompted output cannot be parsed.

    Carries the raw model output for the run log.
    """

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class NotApplicable(FairlensError):
    """Raised when an operation is invoked for a mode it does not apply to."""


class ConfigError(FairlensError):
    """Raised when a run configuration fails validation."""


class RefusesToMixRuns(FairlensError):
    """Raised when resuming into an output directory built from a different config."""
