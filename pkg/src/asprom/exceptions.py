"""Exception hierarchy shared by all modules."""


class AspromError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(AspromError, ValueError):
    pass


class ZeroMatrix(AspromError, ValueError):
    pass


class NonOrthonormalInput(AspromError, ValueError):
    pass


class NotOnManifold(AspromError, ValueError):
    pass


class LogarithmUndefined(AspromError, ValueError):
    pass


class NoConvergence(AspromError, RuntimeError):
    pass


class InvalidConfig(AspromError, ValueError):
    pass


class InvalidParameter(AspromError, ValueError):
    pass


class OutOfBounds(AspromError, ValueError):
    pass


class NotSpd(AspromError, ValueError):
    pass


class SingularSystem(AspromError, RuntimeError):
    pass


class Infeasible(AspromError, RuntimeError):
    pass


class EmptyCandidateSet(AspromError, RuntimeError):
    pass


class EmptyDatabase(AspromError, RuntimeError):
    pass


class InconsistentDatabase(AspromError, RuntimeError):
    pass


class SingularKernelMatrix(AspromError, RuntimeError):
    pass


class SingularCalA(AspromError, RuntimeError):
    pass


class DegenerateMode(AspromError, RuntimeError):
    pass


class OptimizerFailed(AspromError, RuntimeError):
    """Raised when an optimizer run ends abnormally.

    ``record`` holds whatever partial trajectory was produced.
    """

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


class LinesearchFailure(OptimizerFailed):
    pass


class QpInfeasible(OptimizerFailed):
    pass


class InfeasibleStart(AspromError, ValueError):
    pass


class DatabaseIoError(AspromError, OSError):
    pass


class FormatVersionMismatch(DatabaseIoError):
    pass


class DigestMismatch(AspromError, ValueError):
    pass
