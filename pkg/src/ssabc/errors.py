"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration and parameter-domain
problems exit 2, numerical failures exit 3, and I/O problems exit 4.
"""


class ParameterError(ValueError):
    """A parameter vector violates its domain (stationarity, positivity, Feller)."""


class DegeneratePriorError(ParameterError):
    """Rejection sampling from a prior made no progress (acceptance < 1e-6 over 1e7 trials)."""


class ConfigError(ValueError):
    """An experiment configuration file is malformed or inconsistent."""


class NumericalError(ArithmeticError):
    """A numerical routine failed to converge or produced non-finite values."""


class FitError(NumericalError):
    """Maximum likelihood estimation failed at every start point."""


class ConditioningError(NumericalError):
    """A Hessian/weighting matrix could not be stabilised into a usable form."""


class SupportError(NumericalError):
    """All probability mass fell outside the working grid or support."""


class RunError(RuntimeError):
    """An ABC run produced too many non-finite distances to be trusted."""


class DegenerateSampleError(ValueError):
    """A draw set has no spread (e.g. identical values handed to a KDE)."""
