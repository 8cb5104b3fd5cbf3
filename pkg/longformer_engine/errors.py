"""
Engine exceptions.

Every exception carries the process exit code the command line uses for it:
0 ok, 1 usage, 2 data error, 3 numeric failure.
"""

from typing import Any, Dict, Optional


class EngineError(Exception):
    """Base class for all engine failures"""
    exit_code: int = 2


class UsageError(EngineError):
    exit_code = 1


class ConfigError(UsageError):
    """Invalid or unknown configuration values"""


class UnsupportedConfigurationError(UsageError):
    """A kernel was asked for a configuration it cannot compute"""


class RenderGuardError(UsageError):
    """A dense materialization was requested above the size guard"""


class DataError(EngineError):
    exit_code = 2


class DimensionError(DataError):
    """Tensor shapes do not agree"""

    def __init__(self, op: str, *shapes: Any, detail: str = ""):
        shapes_repr = " and ".join(str(tuple(s)) for s in shapes)
        message = f"{op}: incompatible shapes {shapes_repr}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)
        self.op = op
        self.shapes = shapes


class CorpusError(DataError):
    pass


class CorruptCheckpointError(DataError):
    pass


class SequenceTooLongError(DataError):
    pass


class MissingStartTokenError(DataError):
    pass


class EvalProtocolError(DataError):
    pass


class NumericalError(EngineError):
    exit_code = 3


class EmptyAttentionRowError(NumericalError):
    """A softmax row had no unmasked entry: an attention query with no keys"""


class GradCheckError(NumericalError):
    pass


class TimerResolutionError(NumericalError):
    pass


class NonFiniteLossError(NumericalError):
    """Training produced a non-finite loss; `snapshot` holds the diagnostic state"""

    def __init__(self, message: str, snapshot: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.snapshot = snapshot or {}


class OutputValidationError(EngineError):
    pass
