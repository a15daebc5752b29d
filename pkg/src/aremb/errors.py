"""Exception types shared across the package."""


class ArembError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(ArembError, ValueError):
    """Operand shapes are incompatible; the message names both shapes."""


class CapacityError(ArembError, ValueError):
    """A sequence does not fit in the model's context window."""


class VocabularyError(ArembError, ValueError):
    """A token id or symbol is outside the vocabulary."""


class NumericError(ArembError, ArithmeticError):
    """Non-finite values, zero norms, or malformed probability rows."""


class ConfigurationError(ArembError, ValueError):
    """A component is wired up in a way the training contract forbids."""


class RecordParseError(ArembError, ValueError):
    """A record file line could not be parsed; the message names the line."""


class CheckpointError(ArembError, ValueError):
    """Base class for checkpoint load failures."""


class CheckpointVersionError(CheckpointError):
    """The file does not start with the expected magic string."""


class CheckpointTruncatedError(CheckpointError):
    """The file ended before the declared payload was read."""


class CheckpointShapeError(CheckpointError):
    """A stored tensor disagrees with the shape implied by the config."""
