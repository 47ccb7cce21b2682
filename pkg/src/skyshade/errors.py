"""Exception hierarchy shared by every skyshade module."""


class SkyshadeError(Exception):
    """Base class for all errors raised by skyshade."""


class ConfigError(SkyshadeError, ValueError):
    """A configuration value is missing, malformed or out of range."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
