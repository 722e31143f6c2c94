"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration problems exit 2,
file/format problems exit 3, numerical failures exit 4.
"""


class AnmVaeError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(AnmVaeError):
    """Bad shapes, bad config values, unknown keys, mode mismatches."""


class MechanismParseError(ConfigurationError):
    """Syntax error in a mechanism expression.

    Carries the byte offset of the failure and the set of tokens that
    would have been accepted there.
    """

    def __init__(self, message, offset, expected=()):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset
        self.expected = frozenset(expected)


class NumericalDomainError(AnmVaeError):
    """Evaluation left the numerical domain (division by zero,
    non-SPD covariance, 0 raised to a negative power, ...)."""

    def __init__(self, message, value=None):
        super().__init__(message)
        self.value = value


class DataFormatError(AnmVaeError):
    """Malformed or truncated on-disk artifact (dataset, checkpoint)."""


class DegenerateLatentError(AnmVaeError):
    """A latent series has zero variance; signals posterior collapse."""
