"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array dimensions do not agree with declared sizes."""


class ContractViolation(ValueError):
    """A precondition of an operation was not met."""


class NumericError(ArithmeticError):
    """A non-finite value was produced or supplied."""


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class ConfigError(ValueError):
    """Unknown key or invalid value in an experiment configuration."""


class TrainingFailure(RuntimeError):
    """Training diverged (non-finite loss or parameters)."""
