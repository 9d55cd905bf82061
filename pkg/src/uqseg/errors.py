"""Exception hierarchy shared across the package.

Two broad families: container/file-format problems (validation, exit code 1
in the CLI) and numeric domain violations (exit code 2 in the CLI).
"""


class UqsegError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(UqsegError, ValueError):
    """Array rank/extent does not match the operation's contract."""


class DomainError(UqsegError, ValueError):
    """Numeric domain violation: negative variance, non-finite input,
    broken normalization, and similar."""


class EmptyBatchError(DomainError):
    """A loss was requested over a batch with no non-ignored pixels."""


class InsufficientSnapshotsError(DomainError):
    """Posterior finalization needs at least two observed snapshots."""


class ContainerError(UqsegError):
    """Base class for tensor-container format errors."""


class BadMagicError(ContainerError):
    """File does not start with the container magic bytes."""


class UnsupportedVersionError(ContainerError):
    """Container version is not understood by this reader."""


class UnknownDtypeError(ContainerError):
    """Entry carries a dtype code this reader does not know."""


class TruncatedPayloadError(ContainerError):
    """File ended before an entry's declared payload was complete."""


class DuplicateNameError(ContainerError):
    """Two entries in one container share a name."""


class NonFiniteDataError(ContainerError):
    """Loaded float data contains NaN or Inf and the caller did not opt in."""
