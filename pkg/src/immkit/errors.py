"""Exception hierarchy shared by every module of the package."""


class ImmkitError(Exception):
    """Base class for all errors raised by immkit."""


class DimensionMismatch(ImmkitError, ValueError):
    pass


class InvalidParameter(ImmkitError, ValueError):
    pass


class NonFiniteValue(InvalidParameter):
    pass


class NotPositiveDefinite(ImmkitError, ArithmeticError):
    pass


class SingularInnovationCovariance(NotPositiveDefinite):
    pass


class SingularCovariance(NotPositiveDefinite):
    pass


class NotStochastic(InvalidParameter):
    pass


class NotAProbabilityVector(InvalidParameter):
    pass


class DegenerateLikelihoods(ImmkitError, ArithmeticError):
    """Every weighted model likelihood underflowed to zero."""


class EmptyInput(ImmkitError, ValueError):
    pass


class ParseError(ImmkitError):
    """Scenario file could not be parsed. ``location`` is ``(line, column)`` or None."""

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class ValidationError(ImmkitError):
    """Scenario parsed but violates an invariant; ``field`` names the offending entry."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
