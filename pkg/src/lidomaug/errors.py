"""Exception types shared across the package."""


class EngineError(Exception):
    """Base class for errors raised by this package."""


class DataFormatError(EngineError):
    """A file or byte stream does not conform to its documented layout."""


class CacheVersionError(DataFormatError):
    """A world-model cache was written by an incompatible layout version."""


class SpecValidationError(EngineError):
    """An augmentation spec mapping contains invalid or unknown fields."""

    def __init__(self, message: str, fields=()):
        super().__init__(message)
        self.fields = tuple(fields)
