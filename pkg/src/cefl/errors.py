"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A model or run configuration violates a structural constraint."""


class InputError(ValueError):
    """An operation received data that breaks its precondition."""


class ParseError(ValueError):
    """A file being ingested does not match its documented schema."""
