"""Exception types raised across the package."""


class QTrajError(Exception):
    """Base class for all package errors."""


class InvalidOperatorError(QTrajError, ValueError):
    """Operator has the wrong shape or contains non-finite entries."""


class DimensionMismatchError(QTrajError, ValueError):
    pass


class NotCompletelyPositiveError(QTrajError, ValueError):
    """Lindblad coefficient matrix has a negative eigenvalue."""


class NonUnitaryError(QTrajError, ValueError):
    pass


class NoJumpPossibleError(QTrajError, RuntimeError):
    """All channel weights vanish where a jump was requested."""


class ZeroAmplitudeJumpError(QTrajError, RuntimeError):
    pass


class NonUniqueSteadyStateError(QTrajError, RuntimeError):
    pass


class TruncationError(QTrajError, RuntimeError):
    """A numerical cutoff (Fock space, photon-number ladder, counting grid) was exceeded."""


class ConfigError(QTrajError, ValueError):
    pass
