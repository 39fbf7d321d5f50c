"""Exception types raised across the package."""


class RecoveryError(Exception):
    """Base class for recovery failures."""


class ConfigurationError(RecoveryError, ValueError):
    """Invalid sizes, ranks or option combinations."""


class InputShapeError(RecoveryError, ValueError):
    """Query block has the wrong number of rows."""


class IllConditionedInputError(RecoveryError):
    """A random sketch was too degenerate to use; reseed and retry."""


class UnderdeterminedError(RecoveryError):
    """A least-squares system is numerically rank deficient."""


class SingularPencilError(RecoveryError):
    """Sylvester equation without a unique solution."""


class DegeneracyError(RecoveryError):
    """A generic-instance routine met a non-generic input."""
