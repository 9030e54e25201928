"""Exception hierarchy shared by all modules."""


class PhysFilterError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(PhysFilterError, ValueError):
    pass


class SequenceTooShort(PhysFilterError, ValueError):
    pass


class MalformedTrajectory(PhysFilterError, ValueError):
    pass


class SingularMatrix(PhysFilterError, ArithmeticError):
    pass


class SingularKkt(SingularMatrix):
    """The predictor KKT system is numerically singular.

    Usually a sign that the input data is not persistently exciting or the
    regularizer is degenerate.
    """


class SplitRequiresEqualDepths(PhysFilterError, ValueError):
    pass


class SamplingStarved(PhysFilterError, RuntimeError):
    pass


class UnboundedInnerProblem(PhysFilterError, ValueError):
    pass


class NumericalFailure(PhysFilterError, RuntimeError):
    pass


class BoxMissing(PhysFilterError, ValueError):
    pass


class IterationLimit(PhysFilterError, RuntimeError):
    """Raised by solvers that hit their iteration cap.

    The best iterate found so far is attached as ``best``.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ExcitationFailed(PhysFilterError, RuntimeError):
    pass


class GenerationFailed(PhysFilterError, RuntimeError):
    pass


class ConfigError(PhysFilterError, ValueError):
    pass
