"""Exception types shared across the package."""


class IclctError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(IclctError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(IclctError):
    """A documented precondition of an operation was violated."""


class ConfigError(IclctError):
    """Invalid configuration value or combination."""


class DegenerateRowError(IclctError):
    """A softmax row is fully masked and cannot be normalized."""


class DomainError(IclctError):
    """A numeric argument lies outside the mathematical domain."""


class ParseError(IclctError):
    """A data file row could not be parsed."""


class SchemaError(IclctError):
    """A data file does not match the expected column schema."""


class DegenerateEmbeddingError(IclctError):
    """An embedding with zero norm cannot be indexed for cosine search."""


class EmptyContextError(IclctError):
    """Context assembly produced no candidates."""


class FreezeViolationError(IclctError):
    """A frozen parameter group changed during training."""


class TrainingDivergedError(IclctError):
    """The training loss became non-finite."""


class VerificationError(IclctError):
    """A credibility-structure check failed."""
