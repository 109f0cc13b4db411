"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid experiment configuration or model parameters."""


class NumericFailure(RuntimeError):
    """A numerical routine failed to reach its tolerance.

    ``residual`` carries the last measured error, when one is available.
    """

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class DomainError(ArithmeticError):
    """A rescaling factor was requested outside its domain of definition."""


class OutOfSupportError(ValueError):
    """A quantile was requested outside the represented mass of a table."""
