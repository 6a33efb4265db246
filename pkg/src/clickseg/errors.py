"""Exception types shared across the package."""


class ClicksegError(Exception):
    """Base class for all clickseg errors."""


class ValidationError(ClicksegError):
    """Data violates a documented invariant or precondition (CLI exit 1)."""


class FileFormatError(ClicksegError):
    """A binary file does not conform to its expected layout (CLI exit 2)."""
