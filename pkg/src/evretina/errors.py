"""Exception types shared across the package."""


class EvretinaError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(EvretinaError, ValueError):
    pass


class NonFiniteInput(EvretinaError, ValueError):
    pass


class ConfigError(EvretinaError, ValueError):
    """Invalid user configuration (bad JSON, unknown key, value out of range)."""
