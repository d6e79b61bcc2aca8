class FanovaError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(FanovaError, ValueError):
    """Input data or configuration violates a documented precondition."""


class SingularFitError(FanovaError):
    """The penalized least-squares system for a curve fit has no unique solution."""


class DegenerateStatisticError(FanovaError):
    """A ratio statistic has a zero denominator."""
