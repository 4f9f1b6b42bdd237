"""Exception types shared across the package."""


class DSPSDError(Exception):
    """Base class for all package errors."""


class ShapeError(DSPSDError, ValueError):
    """Array dimensions do not line up."""


class ConfigError(DSPSDError, ValueError):
    """Invalid or inconsistent configuration (CLI exit code 3)."""


class DataError(DSPSDError, ValueError):
    """Malformed or inconsistent input data (CLI exit code 2)."""


class NodeNotFoundError(DSPSDError, KeyError):
    """Requested account is not part of the graph."""
