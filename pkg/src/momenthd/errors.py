"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4.
"""


class ConfigError(ValueError):
    """Invalid configuration: bad hyperparameter, shape mismatch, flag misuse."""


class ShapeError(ConfigError):
    """Tensor shapes incompatible with the requested operation."""


class DataError(ValueError):
    """Malformed or inconsistent input data (annotations, features, batches)."""


class ContractError(RuntimeError):
    """An API contract was violated (e.g. backward on a non-scalar loss)."""


class NumericError(ArithmeticError):
    """Non-finite values encountered where finiteness is required."""
