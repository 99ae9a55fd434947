"""Exception types shared across the package."""


class LgsampleError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(LgsampleError, ValueError):
    """A contract violation in inputs: bad shapes, bad flags, bad values."""


class StoreFormatError(ValidationError):
    """An embedding file failed structural or checksum validation."""
