"""Exception hierarchy for the rmbr package.

Validation-type errors (bad inputs, bad configuration, malformed files)
are distinct from runtime errors (transport failures, remote scoring
failures) so the CLI can map them to different exit codes.
"""


class RmbrError(Exception):
    """Base class for all rmbr errors."""


class InvalidInputError(RmbrError, ValueError):
    """Structurally invalid input data (empty lists, bad shapes, bad values)."""


class ConfigError(RmbrError, ValueError):
    """Inconsistent or incomplete configuration."""


class MissingScoreError(RmbrError):
    """A candidate lacks a field required by an active regularizer."""


class ParseError(RmbrError):
    """Malformed file content. Carries the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DimensionError(RmbrError):
    """A preloaded utility matrix is too small for the requested shape."""


class TransportError(RmbrError):
    """Scorer-service connection, protocol, or timeout failure."""


class ScoringError(RmbrError):
    """The scorer service returned an error response for a request."""
