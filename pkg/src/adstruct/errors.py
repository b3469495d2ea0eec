"""Exception hierarchy shared by every subpackage.

The CLI maps each class to its own exit status, see ``adstruct.cli``.
"""


class AdStructError(Exception):
    """Base class for all library errors."""


class ParseError(AdStructError, ValueError):
    """A file could not be parsed (carries the offending line when known)."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(AdStructError, ValueError):
    """Data violates a documented invariant."""


class ConfigurationError(AdStructError, ValueError):
    """A hyperparameter or configuration value is unusable."""


class DimensionError(AdStructError, ValueError):
    """Tensor shapes do not agree."""


class ContractError(AdStructError, ValueError):
    """A caller broke an API precondition (e.g. non-scalar loss)."""
