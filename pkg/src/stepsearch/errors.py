"""Exception types shared across the package."""


class StepSearchError(Exception):
    """Base class for all stepsearch errors."""


class NotTerminal(StepSearchError):
    """Answer extraction attempted on a state without an answer marker."""


class BackendUnavailable(StepSearchError):
    """A backend call failed after exhausting its retry budget."""


class MalformedResponse(StepSearchError):
    """A backend returned a response the client cannot interpret."""


class LogprobsUnsupported(StepSearchError):
    """Sequence scoring requested from a backend that reports no log-probs."""


class UnknownState(StepSearchError):
    """A reasoning state cannot be located in the scripted task graph."""


class SpecValidationError(StepSearchError):
    """A scripted task description violates its schema invariants."""


class DimensionMismatch(StepSearchError):
    """Embedding vectors of different dimensions were mixed."""


class InvalidK(StepSearchError):
    """k-means requested with k outside [1, N]."""


class EmptyRollouts(StepSearchError):
    """A Monte Carlo return was requested from zero rollouts."""


class IndexOutOfRange(StepSearchError):
    """A trajectory step index is outside [0, T-1]."""


class MissingValues(StepSearchError):
    """Intermediate verifier values needed by a lambda-return are absent."""


class EmptyEnsemble(StepSearchError):
    """An ensemble score was requested over zero member scores."""


class InsufficientSamples(StepSearchError):
    """A sample statistic was requested from fewer than two samples."""


class ZeroVariance(StepSearchError):
    """Correlation is undefined because one input has zero variance."""


class LengthMismatch(StepSearchError):
    """Paired sequences have different lengths."""


class NoSolutions(StepSearchError):
    """Answer aggregation was requested over zero terminal solutions."""


class NoTerminalFound(StepSearchError):
    """A search finished without discovering any terminal state."""


class DatasetMismatch(StepSearchError):
    """Two reports being compared do not cover the same problem ids."""
