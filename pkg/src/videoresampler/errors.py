"""Exception hierarchy shared across the package."""


class ResamplerError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(ResamplerError, ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(ResamplerError, ArithmeticError):
    """A forward op produced NaN or Inf."""


class ConfigurationError(ResamplerError, ValueError):
    """Invalid layer/model/rule configuration."""


class PlanError(ConfigurationError):
    """A query/sequence grouping violates the even-divisibility constraint."""


class CapacityError(ResamplerError, ValueError):
    """A sequence is longer than a position table can encode."""


class OracleError(ResamplerError):
    """The finite-difference oracle cannot be trusted (non-deterministic f)."""


class FormatError(ResamplerError, ValueError):
    """A binary container is malformed.

    ``offset`` is the byte position at which reading failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class TrainingAborted(ResamplerError, RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at step {step}")
        self.step = step
        self.loss = loss


class AttentionUnavailable(ResamplerError):
    """Attention maps were not retained for this output."""
