"""Exception types shared across the package."""


class LgpError(Exception):
    """Base class for all package-specific errors."""


class StructuralError(LgpError):
    """A program, instruction or primitive state violates a structural rule."""


class ParseError(LgpError):
    """A serialized program or data file could not be parsed."""


class ConfigError(LgpError):
    """An invalid, inconsistent or unknown configuration value."""
