"""Exception hierarchy shared by all modules."""


class ContractionError(Exception):
    """Base class for errors raised by this package."""


class MissingBoundaryData(ContractionError):
    """An inflowing (or diffusive) boundary face carries no value data."""

    def __init__(self, message, faces=()):
        super().__init__(message)
        self.faces = tuple(faces)


class DerivativeMismatch(ContractionError):
    """A user-supplied derivative disagrees with finite differences of its function."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = float(residual)


class ConstraintError(ContractionError):
    """Constraint projector is not a constant orthogonal projector."""


class ShapeMismatch(ContractionError, ValueError):
    pass


class EmptySampleSet(ContractionError, ValueError):
    pass


class MissingLambdaBound(ContractionError):
    pass


class SingularTheta(ContractionError):
    pass


class CflViolation(ContractionError):
    def __init__(self, message, limit):
        super().__init__(message)
        self.limit = float(limit)


class NonFiniteState(ContractionError):
    pass


class DegenerateSeries(ContractionError):
    pass


class SingularHessian(ContractionError):
    pass


class InsufficientTrajectory(ContractionError):
    pass


class NoClosedFormControl(ContractionError):
    pass


class SingularInformation(ContractionError):
    pass


class DegenerateBasis(ContractionError):
    pass


class UnknownScenario(ContractionError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class BadParams(ContractionError, ValueError):
    pass


class ConvexityLost(UserWarning):
    """The value-function Hessian lost positive definiteness (reported, not raised)."""
