"""Exception types shared across the engine."""


class CondensateError(Exception):
    """Base class for all engine errors."""


class ShapeError(CondensateError):
    """Tensor dimensions are inconsistent with the declared model geometry."""


class EmptyInputError(CondensateError):
    """An operation that requires at least one element received none."""


class SequenceOverflowError(CondensateError):
    """Token sequence exceeds the model's maximum context length."""


class ConfigError(CondensateError):
    """A selection/decode configuration violates its invariants."""


class CacheStateError(CondensateError):
    """KV-cache bookkeeping is inconsistent (positions, retention mode)."""


class WeightFormatError(CondensateError):
    """Base class for weight-container parsing failures."""


class MalformedHeaderError(WeightFormatError):
    """Bad magic, version, or header JSON in a weight file."""


class TruncatedTensorError(WeightFormatError):
    """Payload ends before a tensor's declared extent.

    Carries the offending tensor name in ``.tensor``.
    """

    def __init__(self, tensor: str, message: str | None = None):
        self.tensor = tensor
        super().__init__(message or f"truncated tensor data for '{tensor}'")


class TensorShapeError(WeightFormatError):
    """A stored tensor's shape disagrees with the model geometry."""

    def __init__(self, tensor: str, message: str | None = None):
        self.tensor = tensor
        super().__init__(message or f"shape mismatch for tensor '{tensor}'")


class OracleInfeasibleError(CondensateError):
    """A dense-oracle comparison was requested beyond the desk-scale cap."""


class BudgetExceededError(CondensateError):
    """A synthetic-cache experiment exceeds the configured memory budget."""
