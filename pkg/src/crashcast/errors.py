"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericalError -> 4.
"""


class CrashcastError(Exception):
    """Base class for all package errors."""


class ConfigError(CrashcastError):
    """Invalid configuration, schema violation, or bad command arguments."""


class DataError(CrashcastError):
    """Inputs are structurally valid but inconsistent or unusable."""


class NumericalError(CrashcastError):
    """Non-finite values or numerically impossible requests."""


class SimulationError(DataError):
    """Internal simulator state corruption; aborts the run."""
