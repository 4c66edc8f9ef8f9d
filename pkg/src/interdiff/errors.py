"""Exception hierarchy shared by all modules."""


class InterdiffError(Exception):
    """Base class for library errors."""


class ValidationError(InterdiffError, ValueError):
    """Bad parameters or inputs; maps to CLI exit status 2."""


class NumericalError(InterdiffError, ArithmeticError):
    """A computation produced an unusable number; maps to CLI exit status 3."""


class CutoffExceedsHalfBox(ValidationError):
    pass


class TooFewPoints(ValidationError):
    pass


class BoxMismatch(ValidationError):
    pass


class MissingManifest(InterdiffError, FileNotFoundError):
    pass


class QuadratureNonConvergent(NumericalError):
    pass


class NonFiniteCoefficient(NumericalError):
    pass


class NonFiniteForce(NumericalError):
    pass


class StepTooLarge(NumericalError):
    pass


class FitWindowTooNoisy(NumericalError):
    pass
