"""Exception hierarchy shared across the package."""


class FusegpError(Exception):
    """Base class for all package-specific errors."""


class DataError(FusegpError):
    """Malformed or out-of-contract input data (CSV schema, ranges, joins)."""


class ConfigError(FusegpError):
    """Invalid run configuration (flags, config file, option combinations)."""


class CholeskyError(FusegpError):
    """Covariance factorization failed; carries the offending hyperparameters."""

    def __init__(self, message, hyperparams=None):
        super().__init__(message)
        self.hyperparams = hyperparams


class FitError(FusegpError):
    """Model training failed (e.g. every optimizer restart was infeasible)."""
