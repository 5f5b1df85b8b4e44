"""Exception types shared across the package."""


class GsmgpError(Exception):
    """Base class for all package-specific errors."""


class ZeroSpacingError(GsmgpError):
    """A training dimension has fewer than two distinct values, so no
    highest resolvable frequency can be derived from the input spacing."""


class MemoryBudgetError(GsmgpError):
    """Materialising the requested Gram matrices would exceed the
    configured memory limit."""


class FactorizationError(GsmgpError):
    """A matrix that must be positive definite failed to factor even
    after jitter was applied."""


class ConicBuildError(GsmgpError):
    """A cone program could not be assembled from the given pieces
    (e.g. the frozen covariance part is not positive definite)."""


class SolverError(GsmgpError):
    """The interior-point solver was called with inconsistent shapes or
    an otherwise malformed problem."""


class ProtocolError(GsmgpError):
    """A simulated network message violates the communication protocol
    (unknown node, wrong direction, or out-of-order round)."""


class CodecError(GsmgpError):
    """A byte payload could not be decoded as a valid message body."""


class DataFormatError(GsmgpError):
    """A dataset file does not follow the expected CSV schema."""


class ConfigError(GsmgpError):
    """A run configuration is missing required keys or contains
    unknown/invalid entries."""
