"""Exception hierarchy shared across the package.

Three top-level families map onto the CLI exit codes: UsageError (exit 1),
DataError (exit 2) and NetworkError (exit 3).
"""


class UsageError(ValueError):
    """Caller passed inconsistent arguments (bad shapes, unknown flags, ...)."""


class DataError(Exception):
    """Input data violates a contract (file contents, degenerate values, ...)."""


class FormatError(DataError):
    """Base for structured-file parsing failures."""


class MagicMismatchError(FormatError):
    """File does not start with the expected magic string."""


class VersionMismatchError(FormatError):
    """Versioned file carries an unsupported format version."""


class TruncatedFileError(FormatError):
    """File ended before the declared payload was read."""


class DimMismatchError(FormatError):
    """Embedding dimensionality differs from what the consumer requires."""


class RowCountError(FormatError):
    """Embedding row count differs from the vocabulary size."""


class NonFiniteError(DataError):
    """A value that must be finite is NaN or infinite."""


class DegenerateInputError(DataError):
    """A vector whose norm falls below the normalization floor."""


class PrivacyError(DataError):
    """An outbound payload failed the privacy check."""


class NetworkError(Exception):
    """A remote endpoint could not be reached or kept failing."""
