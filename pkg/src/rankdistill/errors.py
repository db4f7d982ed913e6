"""Exception types shared across the package.

The CLI maps these onto stable exit codes: configuration/contract
violations exit with 2, numeric failures with 3.
"""


class ConfigurationError(ValueError):
    """A config value is missing, malformed, or inconsistent."""


class ContractError(ValueError):
    """A caller violated an operation's precondition."""


class DimensionError(ContractError):
    """Array shapes are incompatible for the requested operation."""


class NumericError(ArithmeticError):
    """A finite value was required but a NaN/Inf appeared."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration
