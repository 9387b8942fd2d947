"""Exception types raised by frflab."""


class FrfLabError(Exception):
    """Base class for all library errors."""


class InvalidArgument(FrfLabError, ValueError):
    """An argument violates a documented precondition."""


class OrderTooLarge(InvalidArgument):
    """The local model has at least as many parameters as window bins."""


class UnstableSystem(FrfLabError):
    """A discretized test system has a pole on or outside the unit circle."""


class NotPositiveDefinite(FrfLabError, ValueError):
    """A covariance matrix could not be factorized, even after jitter."""


class TuningFailed(FrfLabError):
    """No empirical-Bayes start produced a finite objective."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []
