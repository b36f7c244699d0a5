"""Exception hierarchy shared by the package."""


class SpiderError(Exception):
    """Base class for errors raised by spider3p."""


class ConfigError(SpiderError, ValueError):
    """Invalid configuration, arguments or input data."""


class NumericalError(SpiderError, ArithmeticError):
    """A numerical routine failed (non-convergence, non-finite values, ...)."""


class ProxConvergenceError(NumericalError):
    """The root finder of the weighted ellipsoid prox did not converge.

    The final bracket ``(lo, hi)`` on the multiplier is kept on the exception.
    """

    def __init__(self, message, bracket):
        super().__init__(f"{message} (final bracket {bracket!r})")
        self.bracket = bracket


class OracleError(NumericalError):
    """An oracle evaluation failed; ``where`` carries (t, k, i) when known."""

    def __init__(self, message, where=None):
        if where is not None:
            message = f"{message} at {where}"
        super().__init__(message)
        self.where = where


class CapabilityError(SpiderError, TypeError):
    """The oracle lacks a capability (exact or Monte Carlo) required here."""
