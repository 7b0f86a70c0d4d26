"""Exception types shared across the package.

Each class maps onto one CLI exit code, so keep the hierarchy flat.
"""


class HmfError(Exception):
    """Base class for all package errors."""


class ParameterError(HmfError):
    """A sampler or operation was called with invalid parameters."""


class ConfigurationError(HmfError):
    """A model, config file, or entity reference is inconsistent."""


class DataError(HmfError):
    """Input data violates a documented precondition (parse, range, shape)."""


class NumericalError(HmfError):
    """A numerical routine failed beyond the built-in recovery policy."""
