"""Exception types shared across the package.

Exit-code mapping used by the CLI: UsageError -> 2, DataError -> 3,
NumericalError -> 4.
"""


class MMUIError(Exception):
    """Base class for all package errors."""


class DimensionError(MMUIError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigurationError(MMUIError):
    """A configuration value is invalid (bad channel schedule, empty output map, ...)."""


class ContractViolation(MMUIError):
    """An input violates a documented precondition (NaN input, target outside [0,1], ...)."""


class GraphError(MMUIError):
    """Misuse of the backward graph (second backward without a new forward)."""


class NumericalError(MMUIError):
    """Training aborted on a non-finite value; the message names the parameter."""


class UsageError(MMUIError):
    """Invalid command invocation or API call order."""


class DataError(MMUIError):
    """A data file is malformed or inconsistent; the message names file and position."""
