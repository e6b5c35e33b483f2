"""Exception hierarchy shared across the pipeline.

The CLI maps these onto process exit codes (see cli.EXIT_CODES); library
callers can catch Her2ScoreError to trap anything raised on purpose.
"""


class Her2ScoreError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(Her2ScoreError, ValueError):
    """Input violates a precondition (bad dimensions, unknown label, ...)."""


class IncompleteGridError(Her2ScoreError):
    """A patch grid is missing one or more coordinates."""

    def __init__(self, coord, message: str | None = None):
        self.coord = coord
        super().__init__(message or f"grid is missing patch at {coord!r}")


class MappingOutOfRangeError(Her2ScoreError):
    """An inter-modality map sends a coordinate outside the IHC grid."""


class NotInvertibleError(Her2ScoreError):
    """Mapping failed bijection verification and cannot be inverted."""


class BackendUnavailableError(Her2ScoreError):
    """A model backend (sidecar process) failed or refused the handshake."""


class ProtocolViolationError(Her2ScoreError):
    """A sidecar answered with data that breaks the wire contract."""


class UndefinedRocError(Her2ScoreError):
    """ROC requested for a single-class sample set."""
