"""Exception types shared across the library."""


class LqrGradError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(LqrGradError):
    """Input data violates a documented contract (shape, sign, definiteness)."""


class StabilityError(LqrGradError):
    """A matrix required to be Hurwitz (or a gain required to be
    stabilizing) is not.  Carries the offending spectral abscissa when
    known."""

    def __init__(self, message, abscissa=None):
        super().__init__(message)
        self.abscissa = abscissa


class EigendecompositionError(LqrGradError):
    """The QR eigenvalue iteration failed; carries the LAPACK diagnostic."""

    def __init__(self, message, detail=None):
        super().__init__(message)
        self.detail = detail


class IllConditionedError(LqrGradError):
    """A dense solve produced a residual too large to trust.  Carries a
    rough condition estimate (achieved residual over roundoff scale)."""

    def __init__(self, message, condition_estimate=None):
        super().__init__(message)
        self.condition_estimate = condition_estimate


class ConvergenceError(LqrGradError):
    """An iterative solver ran out of iterations; carries the residual
    history for diagnosis."""

    def __init__(self, message, residuals=()):
        super().__init__(message)
        self.residuals = list(residuals)


class DegenerateDirection(LqrGradError):
    """A step rule was asked for a step along a zero direction."""


class UnsupportedForOutputFeedback(LqrGradError):
    """The requested quantity is only defined for state feedback (C = I)."""
