"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: ParameterError/ConfigError -> 2,
DataError -> 3, NumericalError -> 4.
"""


class RenewalError(Exception):
    """Base class for all package errors."""


class ParameterError(RenewalError):
    """Invalid argument value (non-positive scale, bad probability, ...)."""


class ConfigError(ParameterError):
    """Malformed configuration file or flag combination."""


class DataError(RenewalError):
    """Input data violates a contract (negative counts, date gaps, zeros)."""


class DimensionError(DataError):
    """Array lengths or window geometry do not line up."""


class NumericalError(RenewalError):
    """Numerical failure: divergence, non-convergent quadrature, bad Cholesky."""


class DivergenceError(NumericalError):
    """Simulated intensity exceeded the configured cap."""


class StateError(RenewalError):
    """An internal state object violates its invariants."""
